"""Randomized low-diameter partitions and FRT-style dominating trees."""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .metric import FiniteMetric, build_net

# Exhaustive invariant checks on every partition call; the test suite turns
# this on.
CHECK_INVARIANTS = os.environ.get("EMDX_CHECK_INVARIANTS", "") not in ("", "0")


def ceil_log2(x: int) -> int:
    return max(0, (int(x) - 1).bit_length())


def tree_height(radius: int, size: int) -> int:
    # h >= 1 whenever there is more than one point, so that the last round
    # (scale 1) always splits down to singletons.
    if size <= 1:
        return 0
    return max(1, ceil_log2(radius))


@dataclass(frozen=True, eq=False)
class PartitionParams:
    """Scan priority and ball multiplier for one partition call.

    ``order[p]`` is the priority of point p: nets are grown and centers are
    scanned in increasing priority.  In global mode one instance is shared by
    every call of a construction; in per-call mode each call draws its own.
    """

    order: np.ndarray
    beta: float
    mode: str = "global"

    def __post_init__(self):
        if not 1.0 <= self.beta < 2.0:
            raise ValueError(f"beta must lie in [1, 2), got {self.beta}")

    @classmethod
    def draw(cls, rng: np.random.Generator, n: int, mode: str = "global") -> "PartitionParams":
        order = np.empty(n, dtype=np.int64)
        order[rng.permutation(n)] = np.arange(n)
        return cls(order, float(rng.uniform(1.0, 2.0)), mode)


@dataclass(frozen=True)
class Partition:
    clusters: tuple
    centers: tuple

    def __len__(self):
        return len(self.clusters)


def partition(m: FiniteMetric, subset, r: int, params: PartitionParams) -> Partition:
    """Split ``subset`` into clusters of radius < r.

    Centers of a greedy r/2-net are visited in priority order; each takes
    every still-unclaimed point within beta*r/2 of it.  Requires
    r >= R_subset / 2, where R_subset lets the center range over all of X:
    a cluster's claiming center may itself sit in an earlier cluster.
    """
    subset = np.asarray(subset, dtype=np.intp)
    if subset.size == 0:
        raise ValueError("empty subset")
    if 2 * r < m.cover_radius(subset):
        raise ValueError(f"scale {r} is below half the subset radius {m.cover_radius(subset)}")
    net = build_net(m, subset, r / 2, tie_order=params.order)
    reach = params.beta * r / 2
    free = np.ones(subset.size, dtype=bool)
    clusters, centers = [], []
    for c in net.centers:
        take = free & (m.dist[c, subset] <= reach)
        if take.any():
            clusters.append(subset[take])
            centers.append(c)
            free &= ~take
    assert not free.any(), "net did not cover the subset"
    part = Partition(tuple(clusters), tuple(centers))
    if CHECK_INVARIANTS:
        check_partition(m, subset, r, params.beta, part)
    return part


def check_partition(m: FiniteMetric, subset, r: int, beta: float, part: Partition) -> None:
    subset = np.asarray(subset, dtype=np.intp)
    allpts = np.concatenate(part.clusters) if part.clusters else np.array([], dtype=np.intp)
    if allpts.size != subset.size or set(allpts.tolist()) != set(subset.tolist()):
        raise AssertionError("clusters do not partition the subset")
    for cl, c in zip(part.clusters, part.centers):
        if cl.size == 0:
            raise AssertionError("empty cluster")
        dc = m.dist[c, cl]
        if (dc > beta * r / 2).any() or (dc >= r).any():
            raise AssertionError(f"cluster around {c} exceeds radius {r}")


@dataclass(frozen=True, eq=False)
class DominatingTree:
    """Rooted tree over items 0..m-1 with integer edge weights.

    Nodes are numbered so that every parent precedes its children; node 0 is
    the root.  ``weight[u]`` is the length of the edge from u to its parent
    (0 for the root).  ``leaves[i]`` is the node holding item i.
    """

    parent: np.ndarray
    weight: np.ndarray
    leaves: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.parent.shape[0]

    @property
    def n_items(self) -> int:
        return self.leaves.shape[0]

    @cached_property
    def membership(self) -> np.ndarray:
        """Boolean (nodes x items): item i lies in the subtree of node u."""
        mem = np.zeros((self.n_nodes, self.n_items), dtype=bool)
        mem[self.leaves, np.arange(self.n_items)] = True
        for u in range(self.n_nodes - 1, 0, -1):
            mem[self.parent[u]] |= mem[u]
        return mem

    @cached_property
    def root_distance(self) -> np.ndarray:
        out = np.zeros(self.n_nodes, dtype=np.int64)
        for u in range(1, self.n_nodes):
            out[u] = out[self.parent[u]] + self.weight[u]
        return out

    def distance(self, i: int, j: int) -> int:
        a, b = int(self.leaves[i]), int(self.leaves[j])
        rd = self.root_distance
        total = rd[a] + rd[b]
        while a != b:
            if a > b:
                a = int(self.parent[a])
            else:
                b = int(self.parent[b])
        return int(total - 2 * rd[a])

    def distance_matrix(self) -> np.ndarray:
        k = self.n_items
        return np.array([[self.distance(i, j) for j in range(k)] for i in range(k)], dtype=np.int64)

    def compressed(self) -> "DominatingTree":
        """Merge unary non-root chains into single edges.

        Subtree contents are unchanged along a chain, so tree distances and
        every cut-based transport cost are preserved exactly.
        """
        n = self.n_nodes
        nchild = np.bincount(self.parent[1:], minlength=n)
        is_item = np.zeros(n, dtype=bool)
        is_item[self.leaves] = True
        drop = (nchild == 1) & ~is_item
        drop[0] = False
        new_parent = self.parent.copy()
        new_weight = self.weight.copy()
        for u in range(1, n):
            p = new_parent[u]
            if drop[p]:
                new_weight[u] += new_weight[p]
                new_parent[u] = new_parent[p]
        keep = np.flatnonzero(~drop)
        remap = -np.ones(n, dtype=np.int64)
        remap[keep] = np.arange(keep.size)
        parent = np.where(new_parent[keep] >= 0, remap[np.maximum(new_parent[keep], 0)], -1)
        return DominatingTree(parent, new_weight[keep], remap[self.leaves])


def frt_tree(m: FiniteMetric, subset=None, seed=None, mode: str = "global") -> DominatingTree:
    """Random 2-HST over ``subset`` by recursive halving partitions.

    Clusters at depth i come from partitioning their depth-(i-1) parent at
    scale 2^(h-i), and the edge from a depth-i node to its children has
    weight 2^(h-i).  Global mode shares one priority order and one beta
    across all levels; per-call mode redraws them at every partition.
    """
    if subset is None:
        subset = np.arange(m.n)
    subset = np.asarray(subset, dtype=np.intp)
    if subset.size == 0:
        raise ValueError("empty subset")
    rng = np.random.default_rng(seed)
    h = tree_height(m.sub_radius(subset), subset.size)
    params = PartitionParams.draw(rng, m.n, mode)
    parent, weight, members = [-1], [0], [subset]
    frontier = [0]
    for depth in range(1, h + 1):
        r = 1 << (h - depth)
        nxt = []
        for node in frontier:
            if mode == "per-call":
                params = PartitionParams.draw(rng, m.n, mode)
            for cl in partition(m, members[node], r, params).clusters:
                parent.append(node)
                weight.append(2 * r)
                members.append(cl)
                nxt.append(len(members) - 1)
        frontier = nxt
    pos = {int(p): i for i, p in enumerate(subset)}
    leaves = np.empty(subset.size, dtype=np.int64)
    for node in frontier:
        (p,) = members[node]
        leaves[pos[int(p)]] = node
    return DominatingTree(np.array(parent, dtype=np.int64), np.array(weight, dtype=np.int64), leaves)
