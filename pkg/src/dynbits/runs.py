"""Runs of ones with at most ``ell`` defects, static and dynamical, and the series tests.

Indices are 0-based: ``Z_n`` is the longest window starting at position ``n``
that holds at most ``ell`` zeros, provided it has length at least ``ell + 1``.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .errors import BudgetExceededError, DomainError
from .streams import stream
from .timeset import kolmogorov_capacity

MAX_EVENTS = 10**8
# headroom (in units of log_{1/p} n) of extra bits past the last start index
HEADROOM = 4


def _check_p(p):
    if not 0 < p < 1:
        raise DomainError(f"p must lie in (0, 1), got {p!r}")


def _check_ell(ell):
    if int(ell) != ell or ell < 0:
        raise DomainError("ell must be a nonnegative integer")


def log_p(x, p):
    """``l_p x = log_{1/p}(max(x, 100))``; accepts Python integers of any size."""
    return math.log(max(x, 100)) / math.log(1 / p)


@dataclass(frozen=True)
class RunStat:
    n: int
    ell: int
    value: int
    truncated: bool = False


def run_stat(bits, n, ell):
    """``Z_n`` for a finite bit array; ``truncated`` if the window reaches the end."""
    _check_ell(ell)
    bits = np.asarray(bits).astype(bool)
    if not 0 <= n < bits.size:
        raise DomainError("start index out of range")
    zeros = np.flatnonzero(~bits[n:])
    if zeros.size > ell:
        length = int(zeros[ell])
        truncated = False
    else:
        length = bits.size - n
        truncated = True
    return RunStat(int(n), int(ell), length if length >= ell + 1 else 0, truncated)


def _all_runs(bits, n_starts, ell):
    """``Z_m`` for ``m < n_starts`` and whether each one is truncated."""
    N = bits.size
    zeros = np.flatnonzero(~bits)
    m = np.arange(n_starts)
    pos = np.searchsorted(zeros, m) + ell
    ok = pos < zeros.size
    end = np.where(ok, zeros[np.minimum(pos, zeros.size - 1)] if zeros.size else N, N)
    length = end - m
    return np.where(length >= ell + 1, length, 0), ~ok


def extra_bits(n, p, ell):
    return int(math.ceil(HEADROOM * log_p(n, p))) + ell + 1


@dataclass
class RunCheck:
    n: int
    p: float
    ell: int
    max_run: int
    ratio: float
    truncated: bool


def erdos_renyi_check(n, p, ell, seed):
    """``max_{m < n} Z_m / log_{1/p} n`` for one static Bernoulli(p) sequence."""
    _check_p(p)
    _check_ell(ell)
    if n < 2:
        raise DomainError("n must be >= 2")
    N = n + extra_bits(n, p, ell)
    bits = stream(seed).random(N) < p
    runs, trunc = _all_runs(bits, n, ell)
    best = int(runs.max())
    return RunCheck(int(n), float(p), int(ell), best,
                    best / (math.log(n) / math.log(1 / p)), bool(np.any(trunc & (runs == best))))


# --------------------------------------------------------------------------
# dynamical runs


@dataclass
class BitPath:
    """Initial bits plus resampling events of a finite dynamical bit sequence."""

    initial: np.ndarray
    times: np.ndarray
    positions: np.ndarray
    values: np.ndarray


def simulate_bit_path(N, p, horizon, seed):
    rng = stream(seed)
    initial = rng.random(N) < p
    count = rng.poisson(N * horizon) if horizon > 0 else 0
    times = np.sort(rng.uniform(0.0, horizon, count))
    positions = rng.integers(0, N, count)
    values = rng.random(count) < p
    return BitPath(initial, times, positions, values)


@dataclass
class DynamicRun:
    n: int
    p: float
    ell: int
    horizon: float
    initial_value: int  # max_{m < n} Z_m at t = 0
    sup_value: int  # sup over t of max_{m < n} Z_m(t)
    start_value: int  # Z_n at t = 0
    start_sup: int  # sup over t of Z_n(t)
    events: int
    truncated: bool


def _nearest_zeros(bits, i, count, step):
    """Positions of up to ``count`` zeros strictly beyond ``i`` in direction ``step``."""
    out = []
    j = i + step
    N = len(bits)
    while 0 <= j < N and len(out) < count:
        if not bits[j]:
            out.append(j)
        j += step
    return out


def _window_end(bits, start, ell):
    """Position of the ``(ell+1)``-th zero at or after ``start`` (or ``len(bits)``)."""
    seen = 0
    j = start
    N = len(bits)
    while j < N:
        if not bits[j]:
            seen += 1
            if seen > ell:
                return j
        j += 1
    return N


def dynamical_run_sup(n, p, ell, horizon, seed):
    """Suprema over ``t`` in ``[0, horizon]`` of run statistics of a dynamical sequence.

    The first ``n + 4 l_p n + ell + 1`` bits are resampled at rate one each.
    ``sup_value`` tracks ``max_{m < n} Z_m(t)``; ``start_value``/``start_sup``
    track the single statistic ``Z_n(t)``. Only a ``0 -> 1`` flip can lengthen a
    run, and it only lengthens runs whose window covers the flipped position,
    so each such flip is handled by scanning outward for ``ell + 1`` zeros on
    each side.
    """
    _check_p(p)
    _check_ell(ell)
    if n < 1:
        raise DomainError("n must be >= 1")
    if horizon < 0:
        raise DomainError("horizon must be >= 0")
    N = n + extra_bits(n, p, ell)
    if N * horizon > MAX_EVENTS:
        raise BudgetExceededError(f"expected {N * horizon:.3g} events exceeds {MAX_EVENTS}")
    path = simulate_bit_path(N, p, horizon, seed)
    runs, trunc = _all_runs(path.initial, n, ell)
    best = int(runs.max())
    truncated = bool(np.any(trunc & (runs == best)))
    bits = bytearray(path.initial.astype(np.uint8).tobytes())

    start_end = _window_end(bits, n, ell)
    start_value = _run_value(start_end - n, ell)
    start_sup = start_value
    initial = best
    for i, new in zip(path.positions.tolist(), path.values.tolist()):
        old = bits[i]
        if old == new:
            continue
        bits[i] = new
        if n <= i <= start_end:
            start_end = _window_end(bits, n, ell)
            start_sup = max(start_sup, _run_value(start_end - n, ell))
        if not new:
            continue
        left = _nearest_zeros(bits, i, ell + 1, -1)
        right = _nearest_zeros(bits, i, ell + 1, +1)
        for a in range(1, ell + 2):
            # start just after the a-th zero on the left (or at 0)
            m = left[a - 1] + 1 if a <= len(left) else 0
            if m >= n:
                continue
            b = ell + 2 - a
            if b <= len(right):
                end = right[b - 1]
                cut = False
            else:
                end = N
                cut = True
            value = _run_value(end - m, ell)
            if value > best:
                best = value
                truncated = cut
            if a > len(left):
                break
    return DynamicRun(int(n), float(p), int(ell), float(horizon), initial, best,
                      start_value, start_sup, int(path.times.size), truncated)


def _run_value(length, ell):
    return int(length) if length >= ell + 1 else 0


def dynamical_run_path(n, p, ell, horizon, seed):
    """The bit path used by :func:`dynamical_run_sup` for the same arguments."""
    N = n + extra_bits(n, p, ell)
    return simulate_bit_path(N, p, horizon, seed)


# --------------------------------------------------------------------------
# threshold sequences and the series criterion


@dataclass(frozen=True)
class ThresholdSequence:
    """``a_n = round(l_p n + theta l_p l_p n)``."""

    theta: float
    p: float

    def __post_init__(self):
        _check_p(self.p)

    def phi(self, L):
        """Real threshold as a function of ``L = l_p n``."""
        return L + self.theta * math.log(max(L, 100.0)) / math.log(1 / self.p)

    def __call__(self, n):
        return max(1, int(round(self.phi(log_p(n, self.p)))))

    def values(self, n_max):
        """``a_n`` for ``n = 1..n_max`` (vectorized; ``n_max`` moderate)."""
        n = np.arange(1, n_max + 1, dtype=float)
        c = math.log(1 / self.p)
        L = np.log(np.maximum(n, 100.0)) / c
        a = L + self.theta * np.log(np.maximum(L, 100.0)) / c
        return np.maximum(1, np.rint(a)).astype(np.int64)

    def inverse(self, x):
        """``L`` with ``phi(L) = x``; requires ``phi`` increasing."""
        lo = math.log(100) / math.log(1 / self.p)
        if x <= self.phi(lo):
            return lo
        hi = max(2 * lo, x + abs(self.theta) * 10 + 10)
        while self.phi(hi) < x:
            hi *= 2
        return brentq(lambda L: self.phi(L) - x, lo, hi, xtol=1e-12, rtol=1e-14)


@dataclass
class SeriesDiagnostic:
    theta: float
    p: float
    ell: int
    a_values: np.ndarray
    log_terms: np.ndarray  # log of the grouped series mass at each a
    log_partial: np.ndarray  # log partial sums over n with a_n <= a
    tail_exponent: float
    integral_exponent: float
    log_integral: np.ndarray

    @property
    def diverges(self):
        return self.tail_exponent >= -1

    @property
    def integral_diverges(self):
        return self.integral_exponent >= -1


EXACT_N = 10**6
EXACT_A = 1000
LOG_POINTS_PER_DECADE = 60


def _a_grid(a_min, a_max):
    dense = np.arange(a_min, min(a_max, EXACT_A) + 1)
    if a_max <= EXACT_A:
        return dense
    decades = math.log10(a_max / EXACT_A)
    sparse = np.unique(np.rint(np.geomspace(EXACT_A, a_max, int(decades * LOG_POINTS_PER_DECADE) + 2)))
    return np.unique(np.concatenate([dense, sparse[sparse > EXACT_A]])).astype(np.int64)


def series_diagnostic(F, theta, p, ell, n_max=None, log_n_max=None, fit_decades=2.0):
    """Grouped partial sums of ``sum_n K_F(1/a_n) a_n^ell p^{a_n}``.

    Terms with equal ``a_n`` are grouped. For ``n <= 10^6`` the group sizes
    are counted exactly; beyond that they are ``(1/p)^L`` differences evaluated
    in log space, which lets ``n_max`` be astronomically large (pass either an
    integer ``n_max`` or ``log_n_max = log_{1/p} n_max``). This matters:
    ``l_p l_p n`` is constant until ``l_p n >= 100``, so ``theta`` only acts
    for ``n > (1/p)^100``.

    Integer ``a`` are used up to 1000 and a log-spaced sample beyond; the
    partial sums there are trapezoidal in ``a``. The tail exponent is the
    regression slope of the log group mass against ``log a`` over the last
    ``fit_decades`` decades of ``a``; the series diverges iff it is ``>= -1``.
    The integral comparison ``int K_F(1/s) s^(ell-theta) ds`` is reported
    alongside.
    """
    _check_p(p)
    _check_ell(ell)
    seq = ThresholdSequence(float(theta), float(p))
    c = math.log(1 / p)
    if log_n_max is None:
        if n_max is None or n_max < 1000:
            raise DomainError("n_max must be >= 1000")
        log_n_max = math.log(n_max) / c
    elif log_n_max < math.log(1000) / c:
        raise DomainError("n_max must be >= 1000")
    # phi must be increasing on the range
    if 1 + theta / (100 * c) <= 0:
        raise DomainError("theta too negative: a_n is not increasing")
    a_first = seq(1)
    a_last = int(math.floor(seq.phi(log_n_max) - 0.5))
    if a_last < a_first + 10:
        raise DomainError("n_max too small for a tail fit")
    a_vals = _a_grid(a_first, a_last)

    if log_n_max * c < math.log(EXACT_N):
        n_exact = int(math.floor(math.exp(log_n_max * c) + 1e-9))
    else:
        n_exact = EXACT_N
    av, cnt = np.unique(seq.values(n_exact), return_counts=True)
    exact_counts = dict(zip(av.tolist(), cnt.tolist()))
    L_exact = math.log(max(n_exact, 100)) / c

    log_mass = np.empty(a_vals.size)
    for i, a in enumerate(a_vals.tolist()):
        lo = seq.inverse(a - 0.5)
        hi = min(seq.inverse(a + 0.5), log_n_max)
        parts = []
        if a in exact_counts:
            parts.append(math.log(exact_counts[a]))
        lo_c = max(lo, L_exact)
        if hi > lo_c:
            # (1/p)^hi - (1/p)^lo_c in log space
            parts.append(hi * c + math.log(-math.expm1((lo_c - hi) * c)))
        if not parts:
            log_mass[i] = -np.inf
            continue
        log_count = logsumexp(parts)
        K = kolmogorov_capacity(F, 1.0 / a)
        log_mass[i] = log_count + math.log(K) + ell * math.log(a) + a * math.log(p)

    log_partial = _log_partial_sums(a_vals, log_mass)
    keep = np.isfinite(log_mass)
    x = np.log(a_vals[keep].astype(float))
    sel = x >= x[-1] - fit_decades * math.log(10)
    tail = float(np.polyfit(x[sel], log_mass[keep][sel], 1)[0])

    log_integrand = np.array([math.log(kolmogorov_capacity(F, 1.0 / s)) + (ell - theta) * math.log(s)
                              for s in a_vals.tolist()])
    integral_tail = float(np.polyfit(x[sel], log_integrand[keep][sel], 1)[0])
    return SeriesDiagnostic(float(theta), float(p), int(ell), a_vals, log_mass, log_partial,
                            tail, integral_tail, _log_partial_sums(a_vals, log_integrand))


def _log_partial_sums(a_vals, log_terms):
    """Exact cumulative sums over integer ``a``, trapezoidal over the sparse tail."""
    out = np.empty(a_vals.size)
    acc = -np.inf
    for i in range(a_vals.size):
        if i == 0 or a_vals[i] - a_vals[i - 1] == 1:
            acc = np.logaddexp(acc, log_terms[i])
        else:
            width = a_vals[i] - a_vals[i - 1]
            # trapezoid over the integers strictly after a_{i-1} up to a_i
            pair = np.logaddexp(log_terms[i - 1], log_terms[i]) - math.log(2)
            acc = np.logaddexp(acc, pair + math.log(width))
        out[i] = acc
    return out


def series_crossover(F, p, ell, theta_lo, theta_hi, log_n_max, tol=1e-3, fit_decades=2.0):
    """The ``theta`` where the tail exponent crosses ``-1``, by bisection."""
    def excess(theta):
        return series_diagnostic(F, theta, p, ell, log_n_max=log_n_max,
                                 fit_decades=fit_decades).tail_exponent + 1

    f_lo, f_hi = excess(theta_lo), excess(theta_hi)
    if f_lo < 0 or f_hi >= 0:
        raise DomainError("theta bracket does not straddle the crossover")
    while theta_hi - theta_lo > tol:
        mid = (theta_lo + theta_hi) / 2
        if excess(mid) >= 0:
            theta_lo = mid
        else:
            theta_hi = mid
    return (theta_lo + theta_hi) / 2


def write_runs_csv(path, n_values, z_values, thresholds):
    """Emit ``(n, Z, a_n)`` rows."""
    import csv

    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["n", "Z", "a_n"])
        for row in zip(n_values, z_values, thresholds):
            out.writerow([int(v) for v in row])
