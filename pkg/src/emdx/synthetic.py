"""Synthetic integer metrics used by tests and the benchmark runner."""

from __future__ import annotations

import math

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from .metric import FiniteMetric


def l1_metric(points) -> FiniteMetric:
    pts = np.asarray(points, dtype=np.int64)
    return FiniteMetric(np.abs(pts[:, None, :] - pts[None, :, :]).sum(axis=-1))


def grid_metric(side: int, dims: int = 2, n: int | None = None) -> FiniteMetric:
    axes = np.meshgrid(*[np.arange(side)] * dims, indexing="ij")
    pts = np.stack([a.ravel() for a in axes], axis=1)
    return l1_metric(pts[: n if n is not None else len(pts)])


def cloud_metric(n: int, seed=0, dims: int = 2, box: int | None = None) -> FiniteMetric:
    """n distinct random integer points in a box, L1 distances."""
    rng = np.random.default_rng(seed)
    box = box or max(4, 4 * math.ceil(n ** (1 / dims)))
    flat = rng.choice(box**dims, size=n, replace=False)
    pts = np.stack(np.unravel_index(flat, (box,) * dims), axis=1)
    return l1_metric(pts)


def line_metric(n: int, spacing: int = 1) -> FiniteMetric:
    x = np.arange(n, dtype=np.int64) * spacing
    return FiniteMetric(np.abs(x[:, None] - x[None, :]))


def uniform_metric(n: int, d: int = 1) -> FiniteMetric:
    return FiniteMetric(d * (1 - np.eye(n, dtype=np.int64)))


def tree_metric(n: int, seed=0, max_weight: int = 8) -> FiniteMetric:
    """Shortest paths on a random weighted tree."""
    rng = np.random.default_rng(seed)
    if n == 1:
        return FiniteMetric(np.zeros((1, 1), dtype=np.int64))
    parents = np.array([rng.integers(i) for i in range(1, n)])
    w = rng.integers(1, max_weight + 1, size=n - 1)
    g = csr_matrix((w, (np.arange(1, n), parents)), shape=(n, n))
    d = shortest_path(g, directed=False)
    return FiniteMetric(np.rint(d).astype(np.int64))


FAMILIES = {
    "grid": lambda n, seed: grid_metric(math.ceil(math.sqrt(n)), n=n),
    "cloud": lambda n, seed: cloud_metric(n, seed=seed),
    "line": lambda n, seed: line_metric(n),
    "uniform": lambda n, seed: uniform_metric(n),
    "tree": lambda n, seed: tree_metric(n, seed=seed),
}


def make_metric(family: str, n: int, seed=0) -> FiniteMetric:
    try:
        return FAMILIES[family](n, seed)
    except KeyError:
        raise ValueError(f"unknown metric family {family!r}; choose from {sorted(FAMILIES)}") from None
