"""Compact time sets on the half line.

A :class:`TimeSet` is stored as sorted, pairwise disjoint closed intervals
``[lefts[i], rights[i]]``; isolated points are degenerate intervals. Cantor
sets are materialized at a finite depth, and that depth is part of the set's
identity: every query is exact for the depth-``d`` approximant.
"""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DomainError, EmptySetError

# Separations within this relative tolerance of eps count as ">= eps".
SEPARATION_RTOL = 1e-9
# Grid coordinates closer than this to an integer are treated as integers.
GRID_ATOL = 1e-9


@dataclass(frozen=True, eq=False)
class TimeSet:
    kind: str
    lefts: np.ndarray
    rights: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        lefts = np.asarray(self.lefts, dtype=float)
        rights = np.asarray(self.rights, dtype=float)
        if lefts.shape != rights.shape or lefts.ndim != 1:
            raise DomainError("lefts and rights must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(lefts)) and np.all(np.isfinite(rights))):
            raise DomainError("coordinates must be finite")
        if lefts.size and lefts[0] < 0:
            raise DomainError("time sets live in [0, inf)")
        if np.any(rights < lefts):
            raise DomainError("interval with right < left")
        if np.any(lefts[1:] <= rights[:-1]):
            raise DomainError("intervals must be sorted and pairwise disjoint")
        lefts.setflags(write=False)
        rights.setflags(write=False)
        object.__setattr__(self, "lefts", lefts)
        object.__setattr__(self, "rights", rights)

    # construction ---------------------------------------------------------
    @classmethod
    def intervals(cls, intervals):
        iv = sorted((float(a), float(b)) for a, b in intervals)
        lefts = np.array([a for a, _ in iv])
        rights = np.array([b for _, b in iv])
        return cls("intervals", lefts, rights,
                   {"intervals": [[a, b] for a, b in iv]})

    @classmethod
    def points(cls, points):
        pts = np.unique(np.asarray(list(points), dtype=float))
        return cls("points", pts, pts.copy(), {"points": pts.tolist()})

    @classmethod
    def cantor(cls, left=0.0, length=1.0, ratio=1 / 3, depth=0):
        """Level-``depth`` approximant of the middle-gap Cantor set."""
        if not 0 < ratio < 0.5:
            raise DomainError("contraction ratio must lie in (0, 1/2)")
        if depth < 0 or int(depth) != depth:
            raise DomainError("depth must be a nonnegative integer")
        if length <= 0:
            raise DomainError("length must be positive")
        starts = np.array([0.0])
        size = 1.0
        for _ in range(int(depth)):
            size_next = size * ratio
            starts = np.concatenate([starts, starts + size - size_next])
            starts.sort()
            size = size_next
        lefts = left + length * starts
        rights = lefts + length * size
        return cls("cantor", lefts, rights,
                   {"left": float(left), "length": float(length),
                    "ratio": float(ratio), "depth": int(depth)})

    @classmethod
    def from_spec(cls, spec):
        """Build from the JSON form, e.g. ``{"type": "points", "points": [0]}``."""
        kind = spec.get("type")
        if kind == "intervals":
            return cls.intervals(spec["intervals"])
        if kind == "points":
            return cls.points(spec["points"])
        if kind == "cantor":
            return cls.cantor(spec.get("left", 0.0), spec.get("length", 1.0),
                              spec["ratio"], spec["depth"])
        raise DomainError(f"unknown time set type {kind!r}")

    def to_spec(self):
        return {"type": self.kind, **self.params}

    # basic geometry ---------------------------------------------------------
    def __len__(self):
        return int(self.lefts.size)

    @property
    def empty(self):
        return self.lefts.size == 0

    @property
    def inf(self):
        self._require_nonempty()
        return float(self.lefts[0])

    @property
    def sup(self):
        self._require_nonempty()
        return float(self.rights[-1])

    @property
    def diameter(self):
        return self.sup - self.inf

    @property
    def measure(self):
        return float(np.sum(self.rights - self.lefts))

    def contains(self, t):
        t = np.asarray(t, dtype=float)
        j = np.searchsorted(self.rights, t, side="left")
        jc = np.minimum(j, max(len(self) - 1, 0))
        return (j < len(self)) & (self.lefts[jc] <= t) if len(self) else np.zeros_like(t, dtype=bool)

    def intersects_many(self, a, b, closed_right=True):
        """Vectorized test of ``F`` against ``[a, b]`` (or ``[a, b)``)."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.empty:
            return np.zeros(np.broadcast(a, b).shape, dtype=bool)
        j = np.searchsorted(self.rights, a, side="left")
        found = j < len(self)
        left = self.lefts[np.minimum(j, len(self) - 1)]
        if closed_right:
            return found & (left <= b)
        return found & (left < b)

    def _require_nonempty(self):
        if self.empty:
            raise EmptySetError("time set is empty")

    def __repr__(self):
        return f"TimeSet({self.to_spec()!r})"


def intersects(F, interval):
    """True iff ``F`` meets the closed interval ``[a, b]``."""
    a, b = interval
    if a > b:
        raise DomainError("interval must satisfy a <= b")
    return bool(F.intersects_many(a, b))


def kolmogorov_capacity(F, eps):
    """Largest number of points of ``F`` that are pairwise at least ``eps`` apart.

    Greedy left-to-right selection is optimal on the line. Within one
    component the picks form an arithmetic progression, so the loop runs over
    components rather than points.
    """
    F._require_nonempty()
    if not eps > 0:
        raise DomainError("eps must be positive")
    step = eps * (1 - SEPARATION_RTOL)
    lefts, rights = F.lefts, F.rights
    m = len(F)
    count = 1
    cur = lefts[0]
    j = 0
    while True:
        extra = int(np.floor((rights[j] - cur) / step))
        if extra > 0:
            count += extra
            cur = min(cur + extra * eps, rights[j])
        target = cur + step
        j = int(np.searchsorted(rights, target, side="left"))
        if j >= m:
            return count
        cur = max(lefts[j], target)
        count += 1


def covering_count(F, k):
    """Number of grid cells ``[i/k, (i+1)/k]`` that meet ``F``.

    Cells tile ``[0, max(1, sup F)]``; closed cells sharing an endpoint with a
    point of ``F`` both count.
    """
    if k < 1:
        raise DomainError("k must be >= 1")
    if F.empty:
        return 0
    n_cells = int(np.ceil(k * max(1.0, F.sup) - GRID_ATOL))
    lo = F.lefts * k
    hi = F.rights * k
    lo_int = np.abs(lo - np.rint(lo)) < GRID_ATOL
    hi_int = np.abs(hi - np.rint(hi)) < GRID_ATOL
    first = np.where(lo_int, np.rint(lo) - 1, np.floor(lo)).astype(np.int64)
    last = np.where(hi_int, np.rint(hi), np.floor(hi)).astype(np.int64)
    first = np.clip(first, 0, n_cells - 1)
    last = np.clip(last, 0, n_cells - 1)
    count = 0
    reach = -1
    for a, b in zip(first, last):
        a = max(a, reach + 1)
        if b >= a:
            count += b - a + 1
            reach = b
    return int(count)


@dataclass
class CapacityProfile:
    epsilons: np.ndarray
    capacities: np.ndarray
    alpha: float
    beta: float
    doubling: float

    @property
    def dims(self):
        return self.alpha, self.beta


def geometric_grid(lo, hi, num):
    """Decreasing geometric grid from ``hi`` down to ``lo``."""
    if not 0 < lo < hi:
        raise DomainError("need 0 < lo < hi")
    return np.geomspace(hi, lo, int(num))


# Regression window width in decades. One-decade windows lock onto the
# log-periodic staircase of self-similar sets; two decades average it out.
SLOPE_WINDOW = 2.0


def sliding_slopes(x, y, window=SLOPE_WINDOW):
    """Least-squares slopes of ``y`` on ``x`` over windows ``window`` decades wide.

    ``x`` is a natural logarithm; the window is measured in ``log10`` units.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    order = np.argsort(x)
    x, y = x[order], y[order]
    width = window * np.log(10.0)
    if x[-1] - x[0] < width * (1 - 1e-9):
        raise DomainError("grid spans less than one window")
    slopes = []
    for i in range(x.size):
        if x[-1] - x[i] < width * (1 - 1e-9):
            break
        sel = (x >= x[i]) & (x <= x[i] + width * (1 + 1e-9))
        if sel.sum() >= 3:
            slopes.append(np.polyfit(x[sel], y[sel], 1)[0])
    if not slopes:
        raise DomainError("grid too sparse for sliding windows")
    return np.array(slopes)


def minkowski_dims(F, eps_grid):
    """Lower and upper Minkowski dimension estimates on ``eps_grid``.

    Returns a :class:`CapacityProfile`; ``alpha``/``beta`` are the min/max of
    sliding-window regression slopes of ``log K`` against ``log(1/eps)``.
    """
    eps = np.sort(np.asarray(eps_grid, dtype=float))[::-1]
    if eps.size < 4 or np.any(eps <= 0):
        raise DomainError("eps grid must hold at least 4 positive values")
    if np.log10(eps[0] / eps[-1]) < 3 - 1e-9:
        raise DomainError("eps grid must span at least three decades")
    caps = np.array([kolmogorov_capacity(F, e) for e in eps])
    slopes = sliding_slopes(np.log(1 / eps), np.log(caps))
    # K(eps) <= C K(2 eps): record the worst ratio over the grid
    doubling = max(kolmogorov_capacity(F, e) / kolmogorov_capacity(F, 2 * e) for e in eps)
    return CapacityProfile(eps, caps, float(slopes.min()), float(slopes.max()), float(doubling))


def cantor_intervals_exact(left, length, ratio, depth):
    """Level-``depth`` Cantor intervals as exact fractions (test oracle helper)."""
    left, length, ratio = Fraction(left), Fraction(length), Fraction(ratio)
    starts = [Fraction(0)]
    size = Fraction(1)
    for _ in range(depth):
        nxt = size * ratio
        starts = sorted(starts + [s + size - nxt for s in starts])
        size = nxt
    return [(left + length * s, left + length * (s + size)) for s in starts]
