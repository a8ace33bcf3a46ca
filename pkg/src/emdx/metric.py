"""Finite metric spaces, fixed-point distributions, greedy nets and a
doubling-dimension estimate.

All distances are non-negative integers.  Real-valued input tables are
scaled and rounded half-up on ingestion so that every downstream oracle
(min-cost flow, tree decompositions) works in exact integer arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    """Raised when a distance table is not a valid finite metric."""


def _round_half_up(a: np.ndarray) -> np.ndarray:
    return np.floor(a + 0.5).astype(np.int64)


@dataclass(frozen=True, eq=False)
class FiniteMetric:
    dist: np.ndarray
    points: tuple = ()
    alpha: float | None = None
    radius: int = field(init=False)

    def __post_init__(self):
        d = np.ascontiguousarray(self.dist, dtype=np.int64)
        d.setflags(write=False)
        object.__setattr__(self, "dist", d)
        if not self.points:
            object.__setattr__(self, "points", tuple(range(d.shape[0])))
        object.__setattr__(self, "radius", int(d.max(axis=1).min()) if d.size else 0)

    @property
    def n(self) -> int:
        return self.dist.shape[0]

    @property
    def doubling_dimension(self) -> float:
        """User-supplied alpha if present, otherwise the greedy estimate."""
        if self.alpha is not None:
            return float(self.alpha)
        cached = self.__dict__.get("_alpha_est")
        if cached is None:
            cached = estimate_doubling_dimension(self)
            object.__setattr__(self, "_alpha_est", cached)
        return cached

    def with_alpha(self, alpha: float | None) -> "FiniteMetric":
        return FiniteMetric(self.dist, self.points, alpha)

    def restrict(self, subset) -> "FiniteMetric":
        idx = np.asarray(subset, dtype=np.intp)
        return FiniteMetric(self.dist[np.ix_(idx, idx)], tuple(self.points[i] for i in idx))

    def ball(self, p: int, r: float, subset=None) -> np.ndarray:
        """Indices q (of ``subset`` if given) with d(p, q) <= r."""
        if subset is None:
            return np.flatnonzero(self.dist[p] <= r)
        subset = np.asarray(subset, dtype=np.intp)
        return subset[self.dist[p, subset] <= r]

    def sub_radius(self, subset) -> int:
        idx = np.asarray(subset, dtype=np.intp)
        if idx.size == 0:
            return 0
        return int(self.dist[np.ix_(idx, idx)].max(axis=1).min())

    def cover_radius(self, subset) -> int:
        """Smallest radius of a ball centered anywhere in X that holds ``subset``."""
        idx = np.asarray(subset, dtype=np.intp)
        if idx.size == 0:
            return 0
        return int(self.dist[:, idx].max(axis=1).min())

    def __eq__(self, other):
        return (
            isinstance(other, FiniteMetric)
            and self.points == other.points
            and np.array_equal(self.dist, other.dist)
        )

    def __hash__(self):
        return hash(self.dist.tobytes())


@dataclass(frozen=True, eq=False)
class Distribution:
    """Probability vector with integer masses over a common denominator."""

    mass: np.ndarray
    denominator: int

    def __post_init__(self):
        m = np.ascontiguousarray(self.mass, dtype=np.int64)
        if m.ndim != 1:
            raise ValueError("mass must be a vector")
        if (m < 0).any():
            raise ValueError("masses must be non-negative")
        if int(m.sum()) != int(self.denominator):
            raise ValueError(
                f"masses sum to {int(m.sum())}, expected denominator {self.denominator}"
            )
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)
        object.__setattr__(self, "denominator", int(self.denominator))

    @property
    def n(self) -> int:
        return self.mass.shape[0]

    @classmethod
    def point_mass(cls, n: int, p: int, denominator: int = 1) -> "Distribution":
        m = np.zeros(n, dtype=np.int64)
        m[p] = denominator
        return cls(m, denominator)

    @classmethod
    def from_weights(cls, weights, denominator: int) -> "Distribution":
        """Round real weights to the fixed-point grid by largest remainder."""
        w = np.asarray(weights, dtype=float)
        if (w < 0).any() or w.sum() <= 0:
            raise ValueError("weights must be non-negative with positive sum")
        exact = w / w.sum() * denominator
        base = np.floor(exact).astype(np.int64)
        short = denominator - int(base.sum())
        order = np.argsort(-(exact - base), kind="stable")
        base[order[:short]] += 1
        return cls(base, denominator)

    @classmethod
    def random(cls, n: int, denominator: int, rng, support: int | None = None):
        support = n if support is None else min(support, n)
        idx = rng.choice(n, size=support, replace=False)
        w = np.zeros(n)
        w[idx] = rng.exponential(size=support)
        return cls.from_weights(w, denominator)

    def __eq__(self, other):
        return (
            isinstance(other, Distribution)
            and self.denominator == other.denominator
            and np.array_equal(self.mass, other.mass)
        )

    def __hash__(self):
        return hash((self.denominator, self.mass.tobytes()))


def default_denominator(n: int, exponent: int = 2) -> int:
    return max(1, n) ** exponent


@dataclass(frozen=True)
class Net:
    centers: tuple
    scale: float


def validate_table(d: np.ndarray) -> None:
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise MetricError(f"distance table must be square, got shape {d.shape}")
    n = d.shape[0]
    neg = np.argwhere(d < 0)
    if neg.size:
        i, j = neg[0]
        raise MetricError(f"negative distance d({i},{j}) = {d[i, j]}")
    diag = np.flatnonzero(np.diagonal(d) != 0)
    if diag.size:
        i = diag[0]
        raise MetricError(f"nonzero self-distance d({i},{i}) = {d[i, i]}")
    asym = np.argwhere(d != d.T)
    if asym.size:
        i, j = asym[0]
        raise MetricError(f"asymmetric entries d({i},{j}) = {d[i, j]} != d({j},{i}) = {d[j, i]}")
    off = ~np.eye(n, dtype=bool)
    if n and (d[off] == 0).any():
        i, j = np.argwhere((d == 0) & off)[0]
        raise MetricError(f"distinct points {i} and {j} at distance 0")
    for k in range(n):
        bad = d > d[:, k : k + 1] + d[k : k + 1, :]
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise MetricError(
                f"triangle violation at ({i},{k},{j}): "
                f"d({i},{j}) = {d[i, j]} > {d[i, k]} + {d[k, j]}"
            )


def load_metric(source, scale: float = 1.0, alpha: float | None = None) -> FiniteMetric:
    """Validate a distance table and return it as an integer FiniteMetric.

    ``source`` is an array-like table or a path (CSV or the binary EMDX
    container, see :mod:`emdx.formats`).  Entries are multiplied by
    ``scale`` and rounded half-up; the rounded table must be a metric whose
    smallest nonzero distance is at least 1.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        from . import formats

        source = formats.read_metric_table(source)
    raw = np.asarray(source, dtype=float)
    if raw.ndim == 0:
        raw = raw.reshape(1, 1)
    if not np.isfinite(raw).all():
        raise MetricError("distance table has non-finite entries")
    if (raw < 0).any():
        i, j = np.argwhere(raw < 0)[0]
        raise MetricError(f"negative distance d({i},{j}) = {raw[i, j]}")
    d = _round_half_up(raw * scale)
    validate_table(d)
    return FiniteMetric(d, alpha=alpha)


def build_net(m: FiniteMetric, subset, r: float, tie_order=None) -> Net:
    """Greedy r-net: scan points in ``tie_order`` and keep a point iff it is
    farther than ``r`` from every center kept so far."""
    subset = np.asarray(subset, dtype=np.intp)
    if subset.size == 0:
        raise ValueError("empty subset")
    if tie_order is not None:
        rank = np.asarray(tie_order)
        subset = subset[np.argsort(rank[subset], kind="stable")]
    covered = np.zeros(subset.size, dtype=bool)
    centers = []
    for idx, p in enumerate(subset):
        if covered[idx]:
            continue
        centers.append(int(p))
        covered |= m.dist[p, subset] <= r
    return Net(tuple(centers), r)


def _greedy_cover_size(d: np.ndarray, r: float) -> int:
    covered = np.zeros(d.shape[0], dtype=bool)
    count = 0
    for i in range(d.shape[0]):
        if not covered[i]:
            count += 1
            covered |= d[i] <= r
    return count


def estimate_doubling_dimension(m: FiniteMetric, max_centers: int = 64, seed: int = 0) -> float:
    """Heuristic upper estimate of the doubling dimension.

    For sampled centers and every dyadic radius, the ball is covered greedily
    by balls of half the radius; the result is log2 of the largest cover
    seen.  Greedy covers can overshoot the optimum, so this is not a lower
    bound on the true dimension.
    """
    n = m.n
    if n <= 1:
        return 0.0
    if n <= max_centers:
        centers = np.arange(n)
    else:
        centers = np.sort(np.random.default_rng(seed).choice(n, max_centers, replace=False))
    top = int(m.dist.max())
    best = 1
    for j in range(0, max(1, top).bit_length() + 1):
        r = 1 << j
        for c in centers:
            ball = np.flatnonzero(m.dist[c] <= r)
            if ball.size <= best:
                continue
            best = max(best, _greedy_cover_size(m.dist[np.ix_(ball, ball)], r / 2))
    return math.log2(best)


def is_net(m: FiniteMetric, subset, net: Net) -> bool:
    subset = np.asarray(subset, dtype=np.intp)
    c = np.asarray(net.centers, dtype=np.intp)
    if c.size > 1:
        dc = m.dist[np.ix_(c, c)]
        if (dc[~np.eye(c.size, dtype=bool)] <= net.scale).any():
            return False
    return bool((m.dist[np.ix_(subset, c)].min(axis=1) <= net.scale).all())
