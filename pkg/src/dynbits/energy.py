"""Kernel energies of discrete measures and weighted kernel packings.

All measures live on a finite grid of candidate atoms inside the time set;
refining the grid is the convergence knob. Two independent routes estimate
the same scale profile: the minimal kernel energy over probability vectors
(pairwise Frank-Wolfe) and the maximal total weight of a kernel packing
(a dense linear program).
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DomainError, EmptySetError, NumericalError
from .timeset import TimeSet, sliding_slopes

MAX_GRID = 2000
FEAS_TOL = 1e-9
OPT_TOL = 1e-7


@dataclass(frozen=True)
class PsiS:
    """``x -> min(1, |x|**-s)``."""

    s: float

    def __post_init__(self):
        if not self.s > 0:
            raise DomainError("s must be positive")

    def __call__(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        # tiny |x| overflows to inf, which the clamp maps to 1
        with np.errstate(divide="ignore", over="ignore"):
            return np.minimum(1.0, ax ** -self.s)


@dataclass(frozen=True)
class SqrtClamp:
    """``x -> min(1, 1/sqrt(k|x|))``."""

    k: float

    def __post_init__(self):
        if not self.k >= 1:
            raise DomainError("k must be >= 1")

    def __call__(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        with np.errstate(divide="ignore"):
            return np.minimum(1.0, 1.0 / np.sqrt(self.k * ax))


@dataclass(frozen=True)
class LaplaceStieltjes:
    """``x -> (Lg)(|x|)`` for a block scheme; unbounded as ``x -> 0``."""

    scheme: object

    def __call__(self, x):
        from .parity import laplace_g

        ax = np.abs(np.asarray(x, dtype=float))
        out = np.full(ax.shape, np.inf)
        flat = ax.ravel()
        res = out.ravel()
        cache = {}
        for i, v in enumerate(flat):
            if v > 0:
                if v not in cache:
                    cache[v] = laplace_g(self.scheme, v)
                res[i] = cache[v]
        return res.reshape(ax.shape)


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if atoms.shape != weights.shape or atoms.ndim != 1 or atoms.size == 0:
            raise DomainError("atoms and weights must be nonempty 1-d arrays of equal length")
        if np.any(weights < 0):
            raise DomainError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights sum to {weights.sum()!r}, not 1")
        order = np.argsort(atoms, kind="stable")
        object.__setattr__(self, "atoms", atoms[order])
        object.__setattr__(self, "weights", weights[order])

    @classmethod
    def uniform(cls, atoms):
        atoms = np.asarray(atoms, dtype=float)
        return cls(atoms, np.full(atoms.size, 1.0 / atoms.size))

    @classmethod
    def point_mass(cls, a):
        return cls(np.array([float(a)]), np.array([1.0]))

    def supported_in(self, F):
        return bool(np.all(F.contains(self.atoms)))


def kernel_matrix(atoms, kernel, r=1.0):
    atoms = np.asarray(atoms, dtype=float)
    return kernel((atoms[:, None] - atoms[None, :]) / r)


def energy(mu, kernel, r=1.0):
    """``sum_ij w_i w_j kernel((x_i - x_j) / r)``."""
    if not r > 0:
        raise DomainError("r must be positive")
    A = kernel_matrix(mu.atoms, kernel, r)
    return float(mu.weights @ A @ mu.weights)


def grid_points(F, grid_n):
    """Candidate atoms inside ``F``.

    Interval unions get equally spaced points per component (proportional to
    length), finite sets use their points, and Cantor sets use the endpoints
    of the finest construction level whose endpoints fit in ``grid_n`` (plus
    midpoints of the deepest level when those fit too).
    """
    if F.empty:
        raise EmptySetError("time set is empty")
    if grid_n < 1:
        raise DomainError("grid_n must be >= 1")
    if F.kind == "cantor":
        pr = F.params
        level = 0
        while level < pr["depth"] and 2 ** (level + 2) <= grid_n:
            level += 1
        coarse = TimeSet.cantor(pr["left"], pr["length"], pr["ratio"], level)
        pts = [coarse.lefts, coarse.rights]
        if level == pr["depth"] and 3 * 2 ** level <= grid_n:
            pts.append((coarse.lefts + coarse.rights) / 2)
        return np.unique(np.concatenate(pts))
    lengths = F.rights - F.lefts
    total = lengths.sum()
    if total == 0:
        return np.asarray(F.lefts, dtype=float).copy()
    degenerate = lengths == 0
    budget = max(grid_n - int(degenerate.sum()), 2 * int((~degenerate).sum()))
    pts = [F.lefts[degenerate]]
    for a, b in zip(F.lefts[~degenerate], F.rights[~degenerate]):
        n = max(2, int(round(budget * (b - a) / total)))
        pts.append(np.linspace(a, b, n))
    return np.unique(np.concatenate(pts))


@dataclass
class MinEnergyResult:
    measure: DiscreteMeasure
    value: float
    gap: float
    min_potential: float
    iterations: int

    @property
    def converged(self):
        return self.gap < 1e-6

    def __iter__(self):
        # unpacks as (measure, value)
        return iter((self.measure, self.value))


def minimize_quadratic_simplex(A, tol=1e-6, max_iter=200_000, min_iter=0):
    """Pairwise Frank-Wolfe for ``min w^T A w`` over the probability simplex.

    The linear oracle puts mass on the atom of smallest potential ``(A w)_i``;
    each step moves mass from the worst active atom to it with an exact line
    search. The certificate ``gap = w^T A w - min_i (A w)_i`` is a first-order
    optimality gap; for positive semidefinite ``A`` it bounds the suboptimality.

    Returns ``(w, value, gap, iterations)``.
    """
    n = A.shape[0]
    w = np.full(n, 1.0 / n)
    g = A @ w
    gap = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        if it % 2000 == 0:
            g = A @ w
        value = float(w @ g)
        s = int(np.argmin(g))
        gap = value - float(g[s])
        if gap < tol and it > min_iter:
            break
        active = np.flatnonzero(w > 0)
        a = int(active[np.argmax(g[active])])
        if a == s:
            break
        slope = g[s] - g[a]
        curv = A[s, s] + A[a, a] - 2 * A[s, a]
        step = w[a] if curv <= 0 else min(w[a], -slope / curv)
        if step <= 0:
            break
        w[s] += step
        w[a] -= step
        if w[a] < 1e-300:
            w[a] = 0.0
        g += step * (A[:, s] - A[:, a])
    w = np.maximum(w, 0)
    w /= w.sum()
    g = A @ w
    value = float(w @ g)
    gap = value - float(g.min())
    return w, value, gap, it


def min_energy(F, kernel, r=1.0, grid_n=512, tol=1e-6, max_iter=200_000):
    """Approximate ``inf`` of the kernel energy over probability measures on ``F``.

    The returned value is attained by the returned grid measure, so it is an
    upper bound on the infimum restricted to the grid.
    """
    if not r > 0:
        raise DomainError("r must be positive")
    if grid_n > MAX_GRID:
        raise DomainError(f"grid_n must be <= {MAX_GRID}")
    atoms = grid_points(F, grid_n)
    if atoms.size == 0:
        raise EmptySetError("empty candidate grid")
    A = kernel_matrix(atoms, kernel, r)
    w, value, gap, its = minimize_quadratic_simplex(A, tol=tol, max_iter=max_iter)
    keep = w > 0
    mu = DiscreteMeasure(atoms[keep], w[keep] / w[keep].sum())
    return MinEnergyResult(mu, value, gap, value - gap, its)


@dataclass
class PackingSolution:
    points: np.ndarray
    weights: np.ndarray
    value: float
    r: float
    s: float
    dual_bound: float
    max_row: float
    iterations: int = 0


def solve_packing_lp(A, tol=OPT_TOL, max_iter=200):
    """Dense primal-dual interior point for ``max 1^T w : A w <= 1, w >= 0``.

    ``A`` must be symmetric with a positive diagonal and nonnegative entries,
    so ``w = 0`` is feasible and the optimum is bounded. Mehrotra
    predictor-corrector on the normal equations ``(A D1 A + D2) dy = rhs``.

    Returns ``(w, y, iterations)`` where ``w`` is primal feasible within
    ``FEAS_TOL`` and ``y`` is the row dual; callers should repair both.
    """
    n = A.shape[0]
    one = np.ones(n)
    w = np.full(n, 1.0 / n)
    z = np.maximum(one - A @ w, 1.0)
    y = np.ones(n)
    v = np.maximum(A @ y - one, 1.0)
    it = 0
    for it in range(1, max_iter + 1):
        Aw = A @ w
        Ay = A @ y
        rp = one - Aw - z
        rd = Ay - v - one
        mu = (w @ v + z @ y) / (2 * n)
        pobj, dobj = w.sum(), y.sum()
        if (abs(dobj - pobj) <= tol * (1 + abs(pobj))
                and np.abs(rp).max() <= FEAS_TOL and np.abs(rd).max() <= FEAS_TOL * (1 + np.abs(Ay).max())):
            break
        d1 = w / v
        d2 = z / y
        M = (A * d1) @ A
        M[np.diag_indices(n)] += d2
        try:
            factor = cho_factor(M, check_finite=False)
        except np.linalg.LinAlgError:
            # lost definiteness at the end of the path; the repair step handles the rest
            break

        def direction(r_wv, r_zy):
            h1 = -rd + r_wv / w
            rhs = A @ (d1 * h1) - rp + r_zy / y
            dy = cho_solve(factor, rhs, check_finite=False)
            dw = d1 * (h1 - A @ dy)
            dv = (r_wv - v * dw) / w
            dz = (r_zy - z * dy) / y
            return dw, dz, dy, dv

        dw, dz, dy, dv = direction(-w * v, -z * y)
        ap = min(_max_step(w, dw), _max_step(z, dz))
        ad = min(_max_step(y, dy), _max_step(v, dv))
        mu_aff = ((w + ap * dw) @ (v + ad * dv) + (z + ap * dz) @ (y + ad * dy)) / (2 * n)
        sigma = (mu_aff / mu) ** 3
        dw, dz, dy, dv = direction(sigma * mu - w * v - dw * dv, sigma * mu - z * y - dz * dy)
        ap = 0.995 * min(_max_step(w, dw), _max_step(z, dz))
        ad = 0.995 * min(_max_step(y, dy), _max_step(v, dv))
        w = w + ap * dw
        z = z + ap * dz
        y = y + ad * dy
        v = v + ad * dv
    return w, y, it


def _max_step(x, dx):
    neg = dx < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-x[neg] / dx[neg])))


def weighted_packing(F, s, r, grid_n=512):
    """Largest total weight of a size-``r`` weighted ``psi_s`` packing on a grid.

    Solves ``max sum w`` subject to ``sum_j w_j psi_s((x_i - x_j)/r) <= 1`` at
    every grid atom and ``w >= 0``. The primal is rescaled to exact
    feasibility and the dual is rescaled to a valid upper bound, so
    ``value <= N_r(grid) <= dual_bound`` holds regardless of solver accuracy.
    """
    if not r > 0:
        raise DomainError("r must be positive")
    if grid_n > MAX_GRID:
        raise DomainError(f"grid_n must be <= {MAX_GRID}")
    atoms = grid_points(F, grid_n)
    if atoms.size > MAX_GRID:
        raise DomainError(f"candidate grid has {atoms.size} atoms, limit {MAX_GRID}")
    A = kernel_matrix(atoms, PsiS(s), r)
    w, y, its = solve_packing_lp(A)
    w = np.maximum(w, 0.0)
    rows = A @ w
    worst = float(rows.max())
    if worst > 1:
        w = w / worst
        rows = rows / worst
    y = np.maximum(y, 0.0)
    cover = float((A @ y).min())
    if not cover > 0:
        raise NumericalError("packing LP dual is degenerate")
    dual_bound = float(y.sum() / cover)
    value = float(w.sum())
    if dual_bound - value > 1e-6 * (1 + value):
        raise NumericalError(f"packing LP not solved: primal {value!r}, dual {dual_bound!r}")
    keep = w > 0
    return PackingSolution(atoms[keep], w[keep], value, float(r), float(s),
                           dual_bound, float(rows.max()), its)


@dataclass
class BoxProfile:
    r: np.ndarray
    values: np.ndarray
    gamma: float
    delta: float
    route: str


def default_grid_n(F, r, cap=MAX_GRID):
    """Grid size with spacing about ``r/4``, capped at ``cap`` atoms."""
    span = max(F.diameter, r)
    return int(min(cap, max(16, np.ceil(4 * span / r))))


def box_dim_profile(F, s, r_grid, grid_n=None, route="lp", cap=MAX_GRID):
    """Lower/upper box-dimension profile estimates over ``r_grid``.

    ``route="lp"`` regresses ``log N_r`` (packing LP); ``route="energy"``
    regresses ``-log`` of the minimal ``psi_s`` energy at scale ``r``.
    """
    r_grid = np.sort(np.asarray(r_grid, dtype=float))[::-1]
    if r_grid.size < 4 or np.any(r_grid <= 0):
        raise DomainError("r grid must hold at least 4 positive values")
    if np.log10(r_grid[0] / r_grid[-1]) < 3 - 1e-9:
        raise DomainError("r grid must span at least three decades")
    values = []
    for r in r_grid:
        n = grid_n if grid_n is not None else default_grid_n(F, r, cap)
        if route == "lp":
            values.append(weighted_packing(F, s, r, n).value)
        elif route == "energy":
            values.append(1.0 / min_energy(F, PsiS(s), r, n).value)
        else:
            raise DomainError(f"unknown route {route!r}")
    values = np.array(values)
    slopes = sliding_slopes(np.log(1 / r_grid), np.log(values))
    return BoxProfile(r_grid, values, float(slopes.min()), float(slopes.max()), route)


def write_profile_csv(path, profile, energies=None):
    """Emit ``(r, N_r, min_energy)`` rows for plotting."""
    import csv

    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["r", "N_r", "min_energy"])
        for i, r in enumerate(profile.r):
            e = "" if energies is None else f"{energies[i]:.17g}"
            out.writerow([f"{r:.17g}", f"{profile.values[i]:.17g}", e])
