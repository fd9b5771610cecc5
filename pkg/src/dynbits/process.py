"""Dynamical bit sequences: one-bit transition law, sum kernels, simulation.

Each of ``k`` bits carries a rate-one clock; at a tick the bit is replaced by
a fresh Bernoulli(p) draw (which may equal the old value). The sum ``S_k`` is
then a birth-death chain, and all closed forms here are about that chain.
"""

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp, xlog1py, xlogy

from .errors import DomainError
from .streams import stream

MAX_K = 10**6


def _check_p(p):
    if not 0 < p < 1:
        raise DomainError(f"p must lie in (0, 1), got {p!r}")


def _check_t(t):
    if not t >= 0:
        raise DomainError(f"t must be >= 0, got {t!r}")


def _check_k(k):
    if int(k) != k or k < 1 or k > MAX_K:
        raise DomainError(f"k must be an integer in [1, {MAX_K}], got {k!r}")


@dataclass(frozen=True)
class TransitionParams:
    p: float
    t: float
    theta: float
    kappa: float


def transition_params(p, t):
    """Return ``theta = P(0 -> 1)`` and ``kappa = P(1 -> 1)`` over time ``t``."""
    _check_p(p)
    _check_t(t)
    decay = math.exp(-t)
    theta = -p * math.expm1(-t)
    kappa = p + (1 - p) * decay
    return TransitionParams(p=float(p), t=float(t), theta=theta, kappa=kappa)


def transition_matrix(p, t):
    tp = transition_params(p, t)
    return np.array([[1 - tp.theta, tp.theta],
                     [1 - tp.kappa, tp.kappa]])


@dataclass(frozen=True)
class SumDistribution:
    k: int
    probs: np.ndarray

    def __post_init__(self):
        if self.probs.shape != (self.k + 1,):
            raise DomainError("probs must have length k + 1")

    def __getitem__(self, j):
        return float(self.probs[j])

    def mean(self):
        return float(np.dot(np.arange(self.k + 1), self.probs))


def sum_transition_kernel(k, a, t, p):
    """Law of ``S_k(t)`` given ``S_k(0) = a``.

    The ``a`` ones stay one with probability ``kappa`` each and the ``k - a``
    zeros turn on with probability ``theta`` each, so the law is the
    convolution Binomial(a, kappa) * Binomial(k - a, theta).
    """
    _check_k(k)
    if int(a) != a or not 0 <= a <= k:
        raise DomainError(f"a must be an integer in [0, k], got {a!r}")
    tp = transition_params(p, t)
    a = int(a)
    ones = binom_pmf(a, tp.kappa)
    zeros = binom_pmf(k - a, tp.theta)
    probs = np.convolve(ones, zeros)
    return SumDistribution(int(k), probs)


def kernel_matrix(k, t, p):
    """Row-stochastic ``(k+1, k+1)`` matrix of :func:`sum_transition_kernel`."""
    _check_k(k)
    return np.vstack([sum_transition_kernel(k, a, t, p).probs for a in range(k + 1)])


def conditional_return_prob(k, ell, t, p):
    """``P(S_k(t) = k - ell | S_k(0) = k - ell)`` by the closed-form sum.

    Terms are combined in log space, so ``k`` in the thousands is fine.
    """
    _check_k(k)
    if int(ell) != ell or not 0 <= ell <= k:
        raise DomainError(f"ell must be an integer in [0, k], got {ell!r}")
    tp = transition_params(p, t)
    ell = int(ell)
    ones = k - ell
    i = np.arange(min(ell, ones) + 1)
    log_terms = (
        _log_choose(ell, i) + xlogy(i, tp.theta) + xlogy(ell - i, 1 - tp.theta)
        + _log_choose(ones, i) + xlogy(ones - i, tp.kappa) + xlogy(i, 1 - tp.kappa)
    )
    return float(min(1.0, math.exp(logsumexp(log_terms))))


def _log_choose(n, i):
    return gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1)


def binom_pmf(n, q):
    """Binomial(n, q) probabilities of ``0..n``, evaluated in log space.

    scipy's pmf overflows for subnormal ``q`` (tiny ``t`` gives such ``theta``).
    """
    i = np.arange(n + 1)
    return np.exp(_log_choose(n, i) + xlogy(i, q) + xlog1py(n - i, -q))


def sum_generator(k, p):
    """Generator matrix of the birth-death chain ``S_k``."""
    _check_k(k)
    _check_p(p)
    s = np.arange(k + 1)
    up = (k - s) * p
    down = s * (1 - p)
    Q = np.zeros((k + 1, k + 1))
    Q[s[:-1], s[:-1] + 1] = up[:-1]
    Q[s[1:], s[1:] - 1] = down[1:]
    Q[s, s] = -(up + down)
    return Q


# --------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Event list of one simulated path.

    ``indices`` are 0-based bit positions. ``values`` hold the resampled bit,
    which may equal the previous value.
    """

    k: int
    p: float
    horizon: float
    initial_bits: np.ndarray
    times: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    seed: int

    def sums(self):
        """Running sum after each event (length ``len(times)``)."""
        n = self.times.size
        init = self.initial_bits.astype(np.int64)
        if n == 0:
            return np.empty(0, dtype=np.int64)
        vals = self.values.astype(np.int64)
        # previous value at the same index: group events by index, keep time order
        order = np.lexsort((np.arange(n), self.indices))
        idx_sorted = self.indices[order]
        prev_sorted = np.empty(n, dtype=np.int64)
        prev_sorted[1:] = vals[order][:-1]
        first = np.r_[True, idx_sorted[1:] != idx_sorted[:-1]]
        prev_sorted[first] = init[idx_sorted[first]]
        prev = np.empty(n, dtype=np.int64)
        prev[order] = prev_sorted
        return int(init.sum()) + np.cumsum(vals - prev)

    def final_bits(self):
        bits = self.initial_bits.copy()
        # last event per index wins
        idx, pos = np.unique(self.indices[::-1], return_index=True)
        bits[idx] = self.values[::-1][pos]
        return bits

    def sum_at(self, t):
        """``S_k(t)`` for scalar or array ``t``; the path is right-continuous."""
        sums = np.concatenate([[int(self.initial_bits.sum())], self.sums()])
        pos = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
        return sums[pos]

    def epochs(self):
        """Maximal constancy intervals ``[start, end)`` and the sum on each."""
        starts = np.concatenate([[0.0], self.times])
        ends = np.concatenate([self.times, [np.inf]])
        sums = np.concatenate([[int(self.initial_bits.sum())], self.sums()])
        return starts, ends, sums

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (self.k == other.k and self.p == other.p and self.horizon == other.horizon
                and self.seed == other.seed
                and np.array_equal(self.initial_bits, other.initial_bits)
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))

    def to_json(self):
        return json.dumps({
            "k": self.k, "p": self.p, "horizon": self.horizon, "seed": self.seed,
            "initial_bits": self.initial_bits.astype(int).tolist(),
            "times": self.times.tolist(),
            "indices": self.indices.astype(int).tolist(),
            "values": self.values.astype(int).tolist(),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(k=d["k"], p=d["p"], horizon=d["horizon"], seed=d["seed"],
                   initial_bits=np.array(d["initial_bits"], dtype=np.uint8),
                   times=np.array(d["times"], dtype=float),
                   indices=np.array(d["indices"], dtype=np.int64),
                   values=np.array(d["values"], dtype=np.uint8))


def simulate_trajectory(k, p, horizon, seed):
    """Simulate ``k`` bits on ``[0, horizon]`` with one merged rate-``k`` clock.

    Ticks of the merged clock are assigned to uniformly random bits, which by
    superposition is the same law as ``k`` independent rate-one clocks.
    """
    _check_k(k)
    _check_p(p)
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    rng = stream(seed)
    initial = (rng.random(k) < p).astype(np.uint8)
    n = rng.poisson(k * horizon)
    times = np.sort(rng.uniform(0.0, horizon, n))
    indices = rng.integers(0, k, n)
    values = (rng.random(n) < p).astype(np.uint8)
    return Trajectory(int(k), float(p), float(horizon), initial, times, indices, values, seed)


def hits_level(traj, level, F):
    """True iff ``S_k(t) = level`` for some ``t`` in ``F``.

    Exact on the piecewise-constant path: each constancy interval
    ``[t_i, t_{i+1})`` carrying the level is tested against ``F``.
    """
    if F.empty:
        return False
    if F.sup > traj.horizon:
        raise DomainError("time set extends past the trajectory horizon")
    starts, ends, sums = traj.epochs()
    sel = sums == level
    if not np.any(sel):
        return False
    return bool(np.any(F.intersects_many(starts[sel], ends[sel], closed_right=False)))


def simulate_batch(k, p, horizon, n, rng, level=None, F=None, initial_sum=None,
                   stop_on_hit=False):
    """Simulate ``n`` independent paths side by side.

    Returns ``(hits, final_sums)``; ``hits`` is None unless ``level`` and ``F``
    are given. With ``initial_sum`` the initial bits are a uniformly random
    arrangement with exactly that many ones. With ``stop_on_hit`` a path is
    abandoned once it has hit, and its final sum is then meaningless.
    """
    if initial_sum is None:
        bits = rng.random((n, k)) < p
    else:
        if not 0 <= initial_sum <= k:
            raise DomainError("initial_sum must lie in [0, k]")
        keys = rng.random((n, k))
        ranks = np.argsort(np.argsort(keys, axis=1), axis=1)
        bits = ranks < initial_sum
    sums = bits.sum(axis=1).astype(np.int64)
    track = level is not None and F is not None and not F.empty
    hits = np.zeros(n, dtype=bool) if track else None
    if horizon <= 0:
        if track:
            hits[:] = (sums == level) & bool(F.intersects_many(0.0, np.inf))
        return hits, sums
    now = np.zeros(n)
    idx = np.arange(n)
    while idx.size:
        nxt = now[idx] + rng.exponential(1.0 / k, idx.size)
        if track:
            # epoch [now, nxt) carries the current sum; the last one runs to the end
            c = (sums[idx] == level) & ~hits[idx]
            if np.any(c):
                ci = idx[c]
                end = np.where(nxt[c] > horizon, np.inf, nxt[c])
                hits[ci] = F.intersects_many(now[ci], end, closed_right=False)
        keep = nxt <= horizon
        if stop_on_hit and track:
            keep &= ~hits[idx]
        idx = idx[keep]
        if idx.size == 0:
            break
        now[idx] = nxt[keep]
        which = rng.integers(0, k, idx.size)
        new = rng.random(idx.size) < p
        old = bits[idx, which]
        sums[idx] += new.astype(np.int64) - old.astype(np.int64)
        bits[idx, which] = new
    return hits, sums
