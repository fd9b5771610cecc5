"""Parity blocks of a dynamical bit sequence at p = 1/2.

Block ``k`` holds the bits with indices in ``[m(k), m(k+1))`` and ``B_k(t)`` is
their sum mod 2. The objects here are the block-boundary function ``m``
(:class:`BlockScheme`), the kernels ``f_n``, the Riesz product and the Laplace
transform ``Lg`` of ``dg`` with ``log2 g = m^{-1}``, the energies ``I`` and
``J`` of a discrete measure, and an exact simulator for the event that all
of the first ``n`` parities vanish together somewhere in ``[0, 1]``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import BudgetExceededError, DomainError, QuadratureError
from .streams import map_blocks, stream

LN2 = math.log(2.0)
# a factor 1 +- e^{-m lam} is dropped once e^{-m lam} falls below this
PRODUCT_CUTOFF = 1e-17
QUAD_RTOL = 1e-8
# the truncated diagonal of the Riesz product stops once it exceeds this
DIAGONAL_CAP = 1e12
MAX_BITS = 10**7


@dataclass(frozen=True, eq=False)
class BlockScheme:
    """Strictly increasing block-boundary function ``m`` on ``[x_min, inf)``.

    ``kind="mq"`` with ``continuous=False`` is ``m(k) = floor(2^(k/q))`` at
    integers with linear interpolation; ``continuous=True`` is
    ``m(x) = 2^(x/q)`` on the whole line. ``kind="table"`` interpolates the
    tabulated integer values ``m(0), m(1), ...`` linearly and continues them
    geometrically with the last tabulated ratio.
    """

    kind: str
    q: float = float("nan")
    continuous: bool = False
    values: tuple = ()
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "mq":
            if not self.q > 0:
                raise DomainError("q must be positive")
        elif self.kind == "table":
            v = np.asarray(self.values, dtype=float)
            if v.size < 3:
                raise DomainError("a table needs at least 3 values")
            if np.any(v != np.floor(v)) or v[0] < 0:
                raise DomainError("table values must be nonnegative integers")
            if np.any(np.diff(v) <= 0):
                raise DomainError("table values must be strictly increasing")
            if v[0] == 0:
                raise DomainError("table values must be positive for geometric continuation")
        else:
            raise DomainError(f"unknown scheme type {self.kind!r}")
        if self.kind == "mq" and not self.continuous:
            k = np.arange(0, 64)
            if np.any(np.diff(self.m(k)) <= 0):
                raise DomainError("floor(2^(k/q)) is not strictly increasing for this q")
        object.__setattr__(self, "flags", self._compute_flags())

    # construction -----------------------------------------------------------
    @classmethod
    def mq(cls, q, continuous=False):
        return cls("mq", q=float(q), continuous=bool(continuous))

    @classmethod
    def table(cls, values):
        return cls("table", values=tuple(int(v) for v in values))

    @classmethod
    def from_spec(cls, spec):
        kind = spec.get("type")
        if kind == "mq":
            return cls.mq(spec["q"], spec.get("continuous", False))
        if kind == "table":
            return cls.table(spec["values"])
        raise DomainError(f"unknown scheme type {kind!r}")

    def to_spec(self):
        if self.kind == "mq":
            return {"type": "mq", "q": self.q, "continuous": self.continuous}
        return {"type": "table", "values": list(self.values)}

    # evaluation ---------------------------------------------------------------
    @property
    def x_min(self):
        return -math.inf if (self.kind == "mq" and self.continuous) else 0.0

    def _node(self, k):
        """``m`` at integer nodes ``k >= 0`` (float array)."""
        k = np.asarray(k, dtype=float)
        if self.kind == "mq":
            return np.floor(np.exp2(k / self.q))
        v = np.asarray(self.values, dtype=float)
        last = v.size - 1
        ratio = v[-1] / v[-2]
        inside = np.minimum(k, last).astype(int)
        return np.where(k <= last, v[inside], v[-1] * ratio ** (k - last))

    def m(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "mq" and self.continuous:
            return np.exp2(x / self.q)
        if np.any(x < 0):
            raise DomainError("m is defined on [0, inf)")
        j = np.floor(x)
        lo = self._node(j)
        hi = self._node(j + 1)
        return lo + (hi - lo) * (x - j)

    def m_inv(self, t):
        """Inverse of ``m`` by bisection over the nodes (closed form when continuous)."""
        t = float(t)
        if self.kind == "mq" and self.continuous:
            if t <= 0:
                raise DomainError("m^{-1} needs t > 0")
            return self.q * math.log2(t)
        if t < float(self._node(0)):
            raise DomainError("t below the range of m")
        lo, hi = 0, 1
        while float(self._node(hi)) < t:
            lo, hi = hi, hi * 2
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if float(self._node(mid)) <= t:
                lo = mid
            else:
                hi = mid
        a, b = float(self._node(lo)), float(self._node(lo + 1))
        return lo + (t - a) / (b - a)

    def g(self, t):
        return 2.0 ** self.m_inv(t)

    def block_sizes(self, n_blocks):
        """Bits per block ``b_k = m(k+1) - m(k)`` for ``k = 1..n_blocks``."""
        k = np.arange(1, n_blocks + 2)
        nodes = self._node(k) if not (self.kind == "mq" and self.continuous) else np.floor(np.exp2(k / self.q))
        return np.diff(nodes).astype(np.int64)

    def _compute_flags(self):
        t = np.linspace(0.0, 24.0, 24 * 64 + 1)
        vals = self.m(t)
        scaled = np.exp2(-t) * vals
        k = np.arange(0, 25)
        nodes = self._node(k) if not (self.kind == "mq" and self.continuous) else np.exp2(k / self.q)
        ratios = nodes[2:] / nodes[1:-1]
        # sup of the log-slope of m: c^t m(t) is decreasing for c below exp(-sup)
        log_slope = np.diff(np.log(vals)) / np.diff(t)
        return {
            "two_pow_increasing": bool(np.all(np.diff(scaled) > 0)),
            "min_ratio": float(ratios.min()),
            "hadamard": bool(ratios.min() > 1),
            "max_log_slope": float(log_slope.max()),
        }


# --------------------------------------------------------------------------
# kernels


def _exponents(scheme, n, lam):
    """``m(k) |lam|`` for the blocks that matter, ``k = 1..n`` (``n=None`` means infinity)."""
    lam = abs(float(lam))
    cut = -math.log(PRODUCT_CUTOFF)
    if n is None or n == math.inf:
        if lam == 0:
            raise DomainError("infinite product at lambda = 0")
        out = []
        k = 1
        while True:
            e = float(scheme.m(k)) * lam
            if e > cut:
                break
            out.append(e)
            k += 1
        return np.array(out)
    if n < 1:
        raise DomainError("n must be >= 1")
    return scheme.m(np.arange(1, int(n) + 1)) * lam


def f_n(scheme, n, lam):
    """``prod_{k<=n} (1 - exp(-m(k)|lam|))``, accumulated as a sum of logs."""
    if lam == 0:
        return 0.0
    e = _exponents(scheme, n, lam)
    return float(math.exp(np.sum(np.log1p(-np.exp(-e)))))


def riesz_product(scheme, n, lam):
    """``prod_{k<=n} (1 + exp(-m(k)|lam|))``; ``n=None`` is the infinite product."""
    if lam == 0:
        if n is None or n == math.inf:
            return math.inf
        return 2.0 ** int(n)
    e = _exponents(scheme, n, lam)
    return float(math.exp(np.sum(np.log1p(np.exp(-e)))))


def _segment_integrand(scheme, lam):
    return lambda x: math.exp(-lam * float(scheme.m(x)) + x * LN2) * LN2


def _stieltjes_tail(scheme, lam, x0):
    """``int_{x0}^inf exp(-lam m(x)) ln2 2^x dx`` by quadrature on unit segments."""
    f = _segment_integrand(scheme, lam)
    total = 0.0
    err_total = 0.0
    if x0 == -math.inf:
        val, err = quad(f, -math.inf, 0.0, epsabs=0.0, epsrel=QUAD_RTOL, limit=200)
        total += val
        err_total += err
        x0 = 0.0
    a = x0
    while True:
        b = math.floor(a) + 1.0
        val, err = quad(f, a, b, epsabs=0.0, epsrel=QUAD_RTOL, limit=200)
        total += val
        err_total += err
        # past the peak the integrand decays at least geometrically per segment
        m_b = float(scheme.m(b))
        if lam * m_b > 40 and val < 1e-18 * total:
            break
        if b > 4096:
            raise QuadratureError(f"Laplace integral did not converge by x={b} (lambda={lam!r})")
        a = b
    if not total > 0 or err_total > 10 * QUAD_RTOL * total:
        raise QuadratureError(
            f"quadrature error {err_total:.3g} too large for value {total:.3g} at lambda={lam!r}")
    return total


def laplace_g(scheme, lam):
    """``(Lg)(lam) = int_0^inf e^{-lam s} dg(s)``, via ``s = m(x)``.

    The Stieltjes measure ``dg`` lives on the range of ``m``, so the integral
    becomes ``int e^{-lam m(x)} ln2 2^x dx`` over the domain of ``m``.
    """
    lam = float(lam)
    if not lam > 0:
        raise DomainError("lambda must be positive")
    return _stieltjes_tail(scheme, lam, scheme.x_min)


def sandwich_constant(scheme, D):
    """``C`` defined by ``4/C = int_{m(2)}^inf e^{-D s} dg(s)``."""
    if not D > 0:
        raise DomainError("D must be positive")
    return 4.0 / _stieltjes_tail(scheme, float(D), 2.0)


@dataclass
class EnergyIJ:
    I_off: float  # off-diagonal part of the Riesz-product energy
    J_off: float  # off-diagonal part of the Laplace-kernel energy
    offdiag_mass: float  # sum_{i != j} w_i w_j
    diag_mass: float  # sum_i w_i^2
    I_diag: float  # diagonal with the product truncated at DIAGONAL_CAP
    diag_blocks: int
    coincident: bool  # two distinct atoms at the same location

    @property
    def diagonal_flag(self):
        """The full ``I`` and ``J`` diverge for any measure with atoms."""
        return self.diag_mass > 0


def energy_I_J(scheme, mu):
    """Off-diagonal double sums of the Riesz-product and ``Lg`` kernels."""
    x, w = mu.atoms, mu.weights
    dist = np.abs(x[:, None] - x[None, :])
    off = ~np.eye(x.size, dtype=bool)
    coincident = bool(np.any(dist[off] == 0))
    ww = np.outer(w, w)
    uniq, inv = np.unique(dist[off], return_inverse=True)
    I_vals = np.array([riesz_product(scheme, None, d) if d > 0 else math.inf for d in uniq])
    J_vals = np.array([laplace_g(scheme, d) if d > 0 else math.inf for d in uniq])
    pair_w = ww[off]
    diag_mass = float(np.sum(w * w))
    diag_blocks = int(math.ceil(math.log2(DIAGONAL_CAP)))
    return EnergyIJ(
        I_off=float(np.sum(pair_w * I_vals[inv])),
        J_off=float(np.sum(pair_w * J_vals[inv])),
        offdiag_mass=float(pair_w.sum()),
        diag_mass=diag_mass,
        I_diag=diag_mass * 2.0 ** diag_blocks,
        diag_blocks=diag_blocks,
        coincident=coincident,
    )


def kernel_curves(scheme, lambdas, D):
    """Rows ``(lam, riesz_product, 1 + Lg, lower bound)`` for ``lam`` in ``(0, D]``."""
    C = sandwich_constant(scheme, D)
    rows = []
    for lam in lambdas:
        upper = 1.0 + laplace_g(scheme, lam)
        rows.append((float(lam), riesz_product(scheme, None, lam), upper, upper / (4 * (1 + C))))
    return np.array(rows), C


# --------------------------------------------------------------------------
# simulation


def _check_budget(scheme, n_blocks):
    sizes = scheme.block_sizes(n_blocks)
    if np.any(sizes < 1):
        raise DomainError("every block must hold at least one bit")
    if sizes.sum() > MAX_BITS:
        raise BudgetExceededError(f"{int(sizes.sum())} bits exceed the budget of {MAX_BITS}")
    return sizes


def _zero_set_step(rng, rate, intervals):
    """Intersect ``intervals`` with the zero set of a stationary parity chain.

    The chain flips at ``rate``; it is advanced across gaps with its exact
    transition law and simulated event by event inside the intervals.
    """
    out = []
    state = rng.random() < 0.5  # True means parity one
    now = intervals[0][0]
    for a, b in intervals:
        if a > now:
            # P(odd number of flips in time g) = (1 - e^{-2 rate g}) / 2
            if rng.random() < -0.5 * math.expm1(-2 * rate * (a - now)):
                state = not state
            now = a
        while True:
            nxt = now + rng.exponential(1.0 / rate)
            end = min(nxt, b)
            if not state:
                if out and out[-1][1] == now:
                    out[-1] = (out[-1][0], end)
                else:
                    out.append((now, end))
            if nxt >= b:
                # memorylessness: the clock restarts at the next interval
                now = b
                break
            now = nxt
            state = not state
    return out


def _t_m_trial(rng, rates):
    """Number of leading blocks whose parities vanish together somewhere in ``[0, 1]``."""
    intervals = [(0.0, 1.0)]
    for j, rate in enumerate(rates):
        intervals = _zero_set_step(rng, rate, intervals)
        if not intervals:
            return j
    return len(rates)


@dataclass
class TmEstimate:
    n_blocks: int
    trials: int
    counts: np.ndarray  # counts[n-1] = trials whose first n parities vanish together
    seed: int

    @property
    def estimates(self):
        return self.counts / self.trials

    @property
    def stderr(self):
        p = self.estimates
        return np.sqrt(p * (1 - p) / self.trials)


def simulate_T_m(scheme, n_blocks, trials, seed, threads=1):
    """Estimate ``P(exists t in [0,1]: B_k(t) = 0 for all k <= n)`` for ``n = 1..n_blocks``.

    The zero set of the first ``n`` parities only shrinks as ``n`` grows, so
    one trial yields all prefixes at once and the estimates are nonincreasing
    in ``n`` by construction.
    """
    if n_blocks < 1 or trials < 1:
        raise DomainError("n_blocks and trials must be >= 1")
    rates = (_check_budget(scheme, n_blocks) / 2.0).tolist()

    def block(rng, n):
        depth = np.array([_t_m_trial(rng, rates) for _ in range(n)])
        return np.bincount(depth, minlength=n_blocks + 1)

    hist = np.sum(map_blocks(block, int(trials), seed, threads), axis=0)
    # trials reaching depth >= n
    counts = np.cumsum(hist[::-1])[::-1][1:]
    return TmEstimate(int(n_blocks), int(trials), counts.astype(np.int64), seed)


def hit_all_zero_exact_one_block(scheme):
    """``P(exists t in [0,1]: B_1(t) = 0) = 1 - e^{-r}/2`` with ``r = b_1/2``."""
    rate = scheme.block_sizes(1)[0] / 2.0
    return 1.0 - 0.5 * math.exp(-rate)


@dataclass
class ParityTrajectory:
    n_blocks: int
    horizon: float
    initial: np.ndarray  # initial parities
    flips: list  # sorted flip times per block

    def state_at(self, t):
        counts = np.array([np.searchsorted(f, t, side="right") for f in self.flips])
        return (self.initial.astype(np.int64) + counts) % 2


def simulate_parity_trajectory(scheme, n_blocks, seed, horizon=1.0):
    """Full parity paths of the first ``n_blocks`` blocks over ``[0, horizon]``."""
    sizes = _check_budget(scheme, n_blocks)
    rng = stream(seed)
    initial = (rng.random(n_blocks) < 0.5).astype(np.uint8)
    flips = []
    for b in sizes:
        count = rng.poisson(b / 2.0 * horizon)
        flips.append(np.sort(rng.uniform(0.0, horizon, count)))
    return ParityTrajectory(int(n_blocks), float(horizon), initial, flips)
