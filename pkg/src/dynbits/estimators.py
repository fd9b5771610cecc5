"""Hitting probabilities of the sum process: exact oracles, Monte Carlo, scaling harnesses.

The event of interest is ``{S_k(t) = level for some t in F}``. Three routes
compute it:

* :func:`exact_hit_prob_finite` is a taboo dynamic program over finitely many
  times that uses the two-binomial transition kernel;
* :func:`exact_hit_prob` handles interval components with the matrix
  exponential of the chain killed on entering ``level``, and is exact for
  every :class:`~dynbits.timeset.TimeSet`;
* :func:`mc_hit_prob` simulates paths event by event.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.stats import binomtest

from .energy import SqrtClamp, grid_points, min_energy
from .errors import DomainError
from .process import (
    _check_k, _check_p, binom_pmf, conditional_return_prob, kernel_matrix, simulate_batch, sum_generator,
)
from .streams import BLOCK_SIZE, map_blocks
from .timeset import TimeSet, kolmogorov_capacity

MAX_TIMES = 64
MAX_K_DP = 200
# below this many hits a ratio is reported but flagged
MIN_HITS = 50


@dataclass
class HitProbEstimate:
    k: int
    ell: int
    p: float
    F: TimeSet
    trials: int
    hits: int
    seed: int
    p_hat: float = field(init=False)
    ci95: tuple = field(init=False)

    def __post_init__(self):
        if not 0 <= self.hits <= self.trials:
            raise DomainError("hits must lie in [0, trials]")
        self.p_hat = self.hits / self.trials
        ci = binomtest(self.hits, self.trials).proportion_ci(0.95, method="wilson")
        self.ci95 = (float(ci.low), float(ci.high))

    @property
    def half_width(self):
        return (self.ci95[1] - self.ci95[0]) / 2

    @property
    def sigma(self):
        return math.sqrt(max(self.p_hat * (1 - self.p_hat), 0.0) / self.trials)

    def to_dict(self):
        return {"k": self.k, "ell": self.ell, "p": self.p, "F": self.F.to_spec(),
                "trials": self.trials, "hits": self.hits, "p_hat": self.p_hat,
                "ci95": list(self.ci95), "seed": self.seed}


@dataclass
class ScalingReport:
    k_values: np.ndarray
    estimates: list
    theory_values: np.ndarray
    ratios: np.ndarray
    ratio_ci: np.ndarray
    warnings: list = field(default_factory=list)
    slope: float = float("nan")
    slope_se: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def band(self):
        r = self.ratios[self.ratios > 0]
        if r.size == 0:
            return (float("nan"), float("nan"))
        return (float(r.min()), float(r.max()))

    @property
    def spread(self):
        lo, hi = self.band
        return hi / lo

    @property
    def ci_spread(self):
        """Band width using CI endpoints: worst upper over worst lower."""
        lo = self.ratio_ci[:, 0]
        if np.any(lo <= 0):
            return float("inf")
        return float(self.ratio_ci[:, 1].max() / lo.min())

    def to_dict(self):
        return {
            "k_values": [int(k) for k in self.k_values],
            "estimates": [e.to_dict() if hasattr(e, "to_dict") else float(e) for e in self.estimates],
            "theory_values": self.theory_values.tolist(),
            "ratios": self.ratios.tolist(),
            "ratio_ci": self.ratio_ci.tolist(),
            "band": list(self.band),
            "warnings": list(self.warnings),
            "slope": self.slope, "slope_se": self.slope_se,
            "extra": self.extra,
        }


# --------------------------------------------------------------------------
# exact routes


def _check_level(k, level):
    if int(level) != level or not 0 <= level <= k:
        raise DomainError(f"level must be an integer in [0, k], got {level!r}")


def _taboo_dp(k, level, p, times):
    # hit mass is accumulated directly instead of as 1 - survival, so small
    # probabilities keep their relative accuracy
    v = binom_pmf(k, p)
    hit = v[level]
    v[level] = 0.0
    cache = {}
    for gap in np.diff(times):
        if gap == 0:
            continue
        if gap not in cache:
            cache[gap] = kernel_matrix(k, gap, p)
        v = v @ cache[gap]
        hit += v[level]
        v[level] = 0.0
    return float(min(hit, 1.0))


def exact_hit_prob_finite(k, level, p, times):
    """Exact ``P(S_k(t) = level for some t in times)`` in stationarity.

    Parameters
    ----------
    k : int
        Number of bits, at most 200.
    level : int
        Target value of the sum.
    p : float
        Bernoulli parameter.
    times : sequence of float
        Between 1 and 64 nonnegative times.
    """
    _check_k(k)
    _check_p(p)
    if k > MAX_K_DP:
        raise DomainError(f"k must be <= {MAX_K_DP}")
    _check_level(k, level)
    times = np.sort(np.asarray(times, dtype=float))
    if not 1 <= times.size <= MAX_TIMES:
        raise DomainError(f"need between 1 and {MAX_TIMES} times")
    if times[0] < 0 or not np.all(np.isfinite(times)):
        raise DomainError("times must be finite and nonnegative")
    return _taboo_dp(int(k), int(level), p, times)


def hit_prob_on_grid(k, level, p, times):
    """Taboo DP without the size limits (used for grid bracketing)."""
    _check_k(k)
    _check_p(p)
    _check_level(k, level)
    return _taboo_dp(int(k), int(level), p, np.sort(np.asarray(times, dtype=float)))


def exact_hit_prob(k, level, p, F):
    """Exact hitting probability of ``level`` during ``F``.

    Gaps between components use the free transition kernel. Inside a
    component the chain is sent to an absorbing state on entering ``level``,
    and the absorbed mass is read off the matrix exponential.
    """
    _check_k(k)
    _check_p(p)
    _check_level(k, level)
    if F.empty:
        return 0.0
    k, level = int(k), int(level)
    Q = sum_generator(k, p)
    # augmented generator: state `level` becomes absorbing
    Qa = Q.copy()
    Qa[level, :] = 0.0
    free_cache, taboo_cache = {}, {}
    v = binom_pmf(k, p)
    hit = v[level]
    v[level] = 0.0
    prev = F.lefts[0]
    for a, b in zip(F.lefts, F.rights):
        gap = a - prev
        if gap > 0:
            if gap not in free_cache:
                free_cache[gap] = kernel_matrix(k, gap, p)
            v = v @ free_cache[gap]
            hit += v[level]
            v[level] = 0.0
        length = b - a
        if length > 0:
            if length not in taboo_cache:
                taboo_cache[length] = expm(Qa * length)
            v = v @ taboo_cache[length]
            hit += v[level]
            v[level] = 0.0
            np.maximum(v, 0.0, out=v)
        prev = b
    return float(min(hit, 1.0))


@dataclass
class Bracket:
    coarse: float
    fine: float
    n_coarse: int
    n_fine: int

    @property
    def gap(self):
        return self.fine - self.coarse

    @property
    def interval(self):
        """``(fine, fine + gap)``: grid values are lower bounds and refinement converges."""
        return (self.fine, self.fine + max(self.gap, 0.0))


def grid_bracket(k, level, p, F, n_coarse=64, n_fine=1024):
    """Hitting probabilities on a coarse and a fine grid inside ``F``.

    Both are lower bounds for the probability over ``F``; the fine value
    misses at most about the coarse-to-fine gap.
    """
    coarse = hit_prob_on_grid(k, level, p, _bracket_grid(F, n_coarse))
    fine = hit_prob_on_grid(k, level, p, _bracket_grid(F, n_fine))
    return Bracket(coarse, fine, n_coarse, n_fine)


def _bracket_grid(F, n):
    if F.kind == "cantor":
        # atoms of a coarse Cantor level may sit in gaps of finer levels only
        # as endpoints, which are in F
        return grid_points(F, n)
    if F.measure == 0:
        return np.asarray(F.lefts)
    return grid_points(F, n)


# --------------------------------------------------------------------------
# Monte Carlo


def mc_hit_prob(k, ell, p, F, trials, seed, threads=1, block_size=BLOCK_SIZE):
    """Monte Carlo estimate of ``P(S_k(t) = k - ell for some t in F)``.

    Paths run over ``[0, sup F]``. Block ``b`` of trials always uses random
    stream ``(seed, b)``, so the estimate does not depend on ``threads``.
    """
    _check_k(k)
    _check_p(p)
    if int(ell) != ell or not 0 <= ell <= k:
        raise DomainError("ell must be an integer in [0, k]")
    if trials < 1:
        raise DomainError("trials must be >= 1")
    if F.empty:
        raise DomainError("time set is empty")
    level = int(k - ell)
    horizon = F.sup

    def block(rng, n):
        hits, _ = simulate_batch(int(k), p, horizon, n, rng, level=level, F=F, stop_on_hit=True)
        return int(hits.sum())

    hits = sum(map_blocks(block, int(trials), seed, threads, block_size))
    return HitProbEstimate(int(k), int(ell), float(p), F, int(trials), int(hits), seed)


def _ratio_ci(estimates, theory):
    return np.array([[e.ci95[0] / t, e.ci95[1] / t] for e, t in zip(estimates, theory)])


def _insufficient(estimates):
    return [f"k={e.k}: only {e.hits} hits (< {MIN_HITS})" for e in estimates if e.hits < MIN_HITS]


def verify_thm1(F, p, ell, k_grid, trials, seed, threads=1):
    """Ratios ``p_hat / (K_F(1/k) k^ell p^k)`` over ``k_grid``."""
    k_values = np.asarray(k_grid, dtype=int)
    ests, theory = [], []
    for i, k in enumerate(k_values):
        ests.append(mc_hit_prob(int(k), ell, p, F, trials, _sub_seed(seed, i), threads))
        theory.append(kolmogorov_capacity(F, 1.0 / k) * float(k) ** ell * p ** k)
    theory = np.array(theory)
    ratios = np.array([e.p_hat for e in ests]) / theory
    notes = _insufficient(ests)
    for msg in notes:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return ScalingReport(k_values, ests, theory, ratios, _ratio_ci(ests, theory), notes)


def _sub_seed(seed, i):
    # distinct, reproducible seeds per grid point
    return int(np.random.SeedSequence([int(seed), 1 + int(i)]).generate_state(1, np.uint64)[0])


@dataclass
class ReturnReport:
    k_values: np.ndarray
    t_grids: list
    ratios: list
    band: tuple
    per_k: np.ndarray

    @property
    def edge_variation(self):
        """Variation of the per-``k`` band edges over the three largest ``k``."""
        top = self.per_k[-3:]
        lo = top[:, 0].max() / top[:, 0].min()
        hi = top[:, 1].max() / top[:, 1].min()
        return float(lo), float(hi)


def return_bound(k, t):
    """``min(1/sqrt(k t), 1)`` with value 1 at ``t = 0``."""
    if t == 0:
        return 1.0
    return min(1.0 / math.sqrt(k * t), 1.0)


def verify_return_asymptotics(k_grid, t_grid=None, n_t=20):
    """Ratios of the exact return probability at ``ell = k/2``, ``p = 1/2`` to its bound.

    Without ``t_grid`` each ``k`` uses ``n_t`` log-spaced times in ``[1/k, 1]``.
    """
    k_values = np.asarray(k_grid, dtype=int)
    if np.any(k_values % 2) or np.any(k_values < 2):
        raise DomainError("k must be even and >= 2")
    grids, ratios, per_k = [], [], []
    for k in k_values:
        ts = np.geomspace(1.0 / k, 1.0, n_t) if t_grid is None else np.asarray(t_grid, dtype=float)
        r = np.array([conditional_return_prob(int(k), int(k) // 2, t, 0.5) / return_bound(k, t)
                      for t in ts])
        grids.append(ts)
        ratios.append(r)
        per_k.append((r.min(), r.max()))
    per_k = np.array(per_k)
    return ReturnReport(k_values, grids, ratios, (float(per_k[:, 0].min()), float(per_k[:, 1].max())), per_k)


def _slope(k_values, values):
    x = np.log(np.asarray(k_values, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    if x.size < 2 or not np.all(np.isfinite(y)):
        return float("nan"), float("nan")
    coef, cov = np.polyfit(x, y, 1, cov=x.size > 3) if x.size > 3 else (np.polyfit(x, y, 1), None)
    se = float(np.sqrt(cov[0, 0])) if cov is not None else float("nan")
    return float(coef[0]), se


def verify_thm3(F, k_grid, trials, seed, threads=1, grid_n=1024):
    """Ratios ``p_hat * sqrt(k) * E_k`` at ``p = 1/2``, ``ell = k/2``.

    ``E_k`` is the minimal energy of the kernel ``min(1/sqrt(k|x|), 1)`` on a
    grid in ``F``. The report also carries the regression slope of
    ``log p_hat`` on ``log k``.
    """
    k_values = np.asarray(k_grid, dtype=int)
    if np.any(k_values % 2):
        raise DomainError("k must be even")
    ests, energies = [], []
    for i, k in enumerate(k_values):
        ests.append(mc_hit_prob(int(k), int(k) // 2, 0.5, F, trials, _sub_seed(seed, i), threads))
        energies.append(min_energy(F, SqrtClamp(int(k)), 1.0, grid_n).value)
    energies = np.array(energies)
    # theory value is the bound up to constants: 1 / (sqrt(k) E_k)
    theory = 1.0 / (np.sqrt(k_values) * energies)
    p_hat = np.array([e.p_hat for e in ests])
    ratios = p_hat / theory
    notes = _insufficient(ests)
    slope, se = _slope(k_values, p_hat) if np.all(p_hat > 0) else (float("nan"), float("nan"))
    return ScalingReport(k_values, ests, theory, ratios, _ratio_ci(ests, theory), notes,
                         slope, se, {"energies": energies.tolist()})


@dataclass
class CorrelationReport:
    p: float
    ells: list
    k_values: np.ndarray
    lower: np.ndarray  # rows: ell, cols: k; fine-grid DP over the ratio
    upper: np.ndarray

    def spread(self, i):
        return float(self.upper[i].max() / self.lower[i].min())


def verify_correlation_length(p, ells, k_grid, n_coarse=64, n_fine=1024):
    """Bracketed ``P(S_k = k - ell somewhere in [0, 1/k]) / (k^ell p^k)``."""
    k_values = np.asarray(k_grid, dtype=int)
    lower = np.zeros((len(ells), k_values.size))
    upper = np.zeros_like(lower)
    for i, ell in enumerate(ells):
        for j, k in enumerate(k_values):
            F = TimeSet.intervals([[0.0, 1.0 / k]])
            br = grid_bracket(int(k), int(k - ell), p, F, n_coarse, n_fine)
            scale = float(k) ** ell * p ** k
            lo, hi = br.interval
            lower[i, j] = lo / scale
            upper[i, j] = hi / scale
    return CorrelationReport(float(p), list(ells), k_values, lower, upper)
