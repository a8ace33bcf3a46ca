"""Sibling-linked hierarchical well-separated trees.

An SLHST is a 2-HST over the points of a metric whose inner vertices also
carry a small metric over their children (the sibling links).  Building one
runs the recursive partition of :mod:`emdx.partition`, keeps only the ranks
in a random arithmetic progression ``L`` and links siblings by the distance
between their cluster centers plus an additive term that keeps the result
dominating.

Vertex ids follow the canonical order shared by every consumer (encoders on
both sides of a protocol must agree): breadth-first from the root, children
sorted by center id.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .metric import FiniteMetric
from .partition import PartitionParams, partition, tree_height


@dataclass(eq=False)
class Slhst:
    n_points: int
    parent: np.ndarray
    rank: np.ndarray
    center: np.ndarray
    delta: np.ndarray
    leaf_point: np.ndarray
    sibling: list
    h: int
    a: int
    b: int
    levels: tuple
    eps: float
    alpha: float
    children: list = field(init=False, repr=False)

    def __post_init__(self):
        nv = self.parent.shape[0]
        kids = [[] for _ in range(nv)]
        for v in range(1, nv):
            kids[self.parent[v]].append(v)
        self.children = [np.array(k, dtype=np.int64) for k in kids]

    @property
    def n_vertices(self) -> int:
        return self.parent.shape[0]

    @cached_property
    def inner(self) -> np.ndarray:
        """Inner vertices v_1..v_N in canonical order."""
        return np.array([v for v in range(self.n_vertices) if self.children[v].size], dtype=np.int64)

    @cached_property
    def inner_index(self) -> np.ndarray:
        idx = -np.ones(self.n_vertices, dtype=np.int64)
        idx[self.inner] = np.arange(self.inner.size)
        return idx

    @cached_property
    def leaf_of_point(self) -> np.ndarray:
        out = np.empty(self.n_points, dtype=np.int64)
        leaves = np.flatnonzero(self.leaf_point >= 0)
        out[self.leaf_point[leaves]] = leaves
        return out

    @cached_property
    def root_distance(self) -> np.ndarray:
        """Length of the tree path from the root to every vertex."""
        out = np.zeros(self.n_vertices, dtype=np.int64)
        for v in range(1, self.n_vertices):
            p = self.parent[v]
            out[v] = out[p] + self.delta[p]
        return out

    @cached_property
    def depth(self) -> np.ndarray:
        out = np.zeros(self.n_vertices, dtype=np.int64)
        for v in range(1, self.n_vertices):
            out[v] = out[self.parent[v]] + 1
        return out

    @cached_property
    def leaves_below(self) -> list:
        """Points under each vertex, in increasing point order."""
        below = [None] * self.n_vertices
        for v in range(self.n_vertices - 1, -1, -1):
            if self.leaf_point[v] >= 0:
                below[v] = np.array([self.leaf_point[v]], dtype=np.int64)
            else:
                below[v] = np.sort(np.concatenate([below[u] for u in self.children[v]]))
        return below

    def child_position(self, v: int) -> dict:
        return {int(u): i for i, u in enumerate(self.children[v])}

    def node_mass(self, mass) -> np.ndarray:
        """Total mass below every vertex for a mass vector over the points."""
        out = np.zeros(self.n_vertices, dtype=np.int64)
        out[self.leaf_of_point] = np.asarray(mass, dtype=np.int64)
        for d in range(int(self.depth.max()), 0, -1):
            vs = self._by_depth[d]
            np.add.at(out, self.parent[vs], out[vs])
        return out

    @cached_property
    def _by_depth(self) -> dict:
        return {int(d): np.flatnonzero(self.depth == d) for d in np.unique(self.depth)}

    def sub_distribution(self, node_mass: np.ndarray, v: int) -> np.ndarray:
        """mu-hat_v: the masses of v's children."""
        return node_mass[self.children[v]]

    def arrays(self) -> dict:
        sizes = np.array([0 if s is None else s.shape[0] for s in self.sibling], dtype=np.int64)
        flat = [s.ravel() for s in self.sibling if s is not None]
        return {
            "slhst.parent": self.parent,
            "slhst.rank": self.rank,
            "slhst.center": self.center,
            "slhst.delta": self.delta,
            "slhst.leaf_point": self.leaf_point,
            "slhst.sibling_size": sizes,
            "slhst.sibling": np.concatenate(flat) if flat else np.zeros(0, dtype=np.int64),
            "slhst.levels": np.array(self.levels, dtype=np.int64),
        }

    def meta(self) -> dict:
        return {
            "n_points": self.n_points,
            "h": self.h,
            "a": self.a,
            "b": self.b,
            "eps": self.eps,
            "alpha": self.alpha,
        }

    @classmethod
    def from_arrays(cls, meta: dict, arrays: dict) -> "Slhst":
        sizes = arrays["slhst.sibling_size"]
        flat = arrays["slhst.sibling"]
        sibling, pos = [], 0
        for s in sizes:
            s = int(s)
            if s == 0:
                sibling.append(None)
            else:
                sibling.append(np.array(flat[pos : pos + s * s], dtype=np.int64).reshape(s, s))
                pos += s * s
        return cls(
            n_points=int(meta["n_points"]),
            parent=np.array(arrays["slhst.parent"], dtype=np.int64),
            rank=np.array(arrays["slhst.rank"], dtype=np.int64),
            center=np.array(arrays["slhst.center"], dtype=np.int64),
            delta=np.array(arrays["slhst.delta"], dtype=np.int64),
            leaf_point=np.array(arrays["slhst.leaf_point"], dtype=np.int64),
            sibling=sibling,
            h=int(meta["h"]),
            a=int(meta["a"]),
            b=int(meta["b"]),
            levels=tuple(int(x) for x in arrays["slhst.levels"]),
            eps=float(meta["eps"]),
            alpha=float(meta["alpha"]),
        )

    @cached_property
    def ident(self) -> bytes:
        """SHA-256 over the serialized tree; ties encodings to their SLHST."""
        hsh = hashlib.sha256()
        for k in sorted(self.meta()):
            hsh.update(f"{k}={self.meta()[k]!r};".encode())
        arrs = self.arrays()
        for k in sorted(arrs):
            hsh.update(k.encode())
            hsh.update(np.ascontiguousarray(arrs[k], dtype="<i8").tobytes())
        return hsh.digest()


def shrink_param(eps: float, n: int, alpha: float) -> int:
    """a = ceil(eps * log2(n) / alpha), at least 1."""
    if n <= 1:
        return 1
    if alpha <= 0:
        raise ValueError("doubling dimension must be positive for n > 1")
    return max(1, math.ceil(eps * math.log2(n) / alpha - 1e-12))


def level_set(h: int, a: int, b: int) -> tuple:
    return tuple(sorted({i for i in range(h + 1) if i % a == b % a} | {0, h}))


def build_slhst(
    m: FiniteMetric,
    eps: float,
    seed=None,
    alpha: float | None = None,
    mode: str = "global",
) -> Slhst:
    """Random SLHST supporting the points of ``m``.

    ``alpha`` overrides the metric's doubling dimension (which falls back to
    the greedy estimate).  ``mode`` selects shared ("global") or per-call
    partition randomness.
    """
    if not 0 < eps <= 1 / 3 + 1e-12:
        raise ValueError(f"eps must lie in (0, 1/3], got {eps}")
    n = m.n
    rng = np.random.default_rng(seed)
    if alpha is None:
        alpha = m.doubling_dimension
    alpha = float(alpha)
    h = tree_height(m.radius, n)

    # full 2-HST; rank-i clusters as (members, center, parent cluster index)
    root_center = int(np.argmin(m.dist.max(axis=1))) if n else 0
    ranks = [[(np.arange(n), root_center, -1)]]
    params = PartitionParams.draw(rng, n, mode)
    for i in range(1, h + 1):
        r = 1 << (h - i)
        level = []
        for ci, (members, _, _) in enumerate(ranks[-1]):
            if mode == "per-call":
                params = PartitionParams.draw(rng, n, mode)
            part = partition(m, members, r, params)
            level.extend((cl, c, ci) for cl, c in zip(part.clusters, part.centers))
        ranks.append(level)

    a = shrink_param(eps, n, alpha)
    b = int(rng.integers(a))
    levels = level_set(h, a, b)

    # ancestor of each kept cluster at the previous kept rank
    kept = {0: [(0, -1)]}  # rank -> list of (cluster index, kept parent cluster index)
    anc = np.zeros(1, dtype=np.int64)  # per cluster at current rank: nearest kept ancestor
    for i in range(1, h + 1):
        par = np.array([c[2] for c in ranks[i]], dtype=np.int64)
        prev_anc = anc[par]
        if i in levels:
            kept[i] = [(ci, int(prev_anc[ci])) for ci in range(len(ranks[i]))]
            anc = np.arange(len(ranks[i]), dtype=np.int64)
        else:
            # clusters below a dropped rank point to their kept ancestor
            anc = prev_anc

    # canonical BFS numbering, children sorted by center id
    order = [(0, 0)]  # (rank, cluster index)
    kids = {}
    for pos, i in enumerate(levels[1:], start=1):
        prev = levels[pos - 1]
        for ci, pc in kept[i]:
            kids.setdefault((prev, pc), []).append((i, ci))
    vid = {}
    parent, rank, center, members = [], [], [], []
    queue = [((0, 0), -1)]
    head = 0
    while head < len(queue):
        key, par = queue[head]
        head += 1
        vid[key] = len(parent)
        i, ci = key
        parent.append(par)
        rank.append(i)
        center.append(ranks[i][ci][1])
        members.append(ranks[i][ci][0])
        ch = sorted(kids.get(key, []), key=lambda k: ranks[k[0]][k[1]][1])
        queue.extend((k, vid[key]) for k in ch)

    nv = len(parent)
    parent = np.array(parent, dtype=np.int64)
    rank = np.array(rank, dtype=np.int64)
    center = np.array(center, dtype=np.int64)
    leaf_point = -np.ones(nv, dtype=np.int64)
    delta = np.zeros(nv, dtype=np.int64)
    child_lists = [[] for _ in range(nv)]
    for v in range(1, nv):
        child_lists[parent[v]].append(v)
    sibling = []
    for v in range(nv):
        ch = child_lists[v]
        if not ch:
            (p,) = members[v]
            leaf_point[v] = p
            sibling.append(None)
            continue
        delta[v] = 1 << (h - rank[v])
        j = int(rank[ch[0]])
        cs = center[ch]
        dv = m.dist[np.ix_(cs, cs)] + (1 << (h - j + 1))
        np.fill_diagonal(dv, 0)
        sibling.append(dv.astype(np.int64))
    return Slhst(
        n_points=n,
        parent=parent,
        rank=rank,
        center=center,
        delta=delta,
        leaf_point=leaf_point,
        sibling=sibling,
        h=h,
        a=a,
        b=b,
        levels=levels,
        eps=float(eps),
        alpha=alpha,
    )


def slhst_distance(t: Slhst, p: int, q: int) -> int:
    """Shortest-path distance between points p and q in the SLHST graph.

    The path climbs to the children u, w of the lowest common ancestor v and
    crosses either by the sibling link or through v itself, whichever is
    shorter.  No other route can win: sibling links at v only connect
    children of v, and any detour into another subtree must climb back out
    through the same child.
    """
    if not (0 <= p < t.n_points and 0 <= q < t.n_points):
        raise ValueError(f"points {p}, {q} are not leaves of the tree")
    if p == q:
        return 0
    u, w = int(t.leaf_of_point[p]), int(t.leaf_of_point[q])
    rd = t.root_distance
    dp, dq = rd[u], rd[w]
    depth = t.depth
    while depth[u] > depth[w]:
        u = int(t.parent[u])
    while depth[w] > depth[u]:
        w = int(t.parent[w])
    while t.parent[u] != t.parent[w]:
        u, w = int(t.parent[u]), int(t.parent[w])
    v = int(t.parent[u])
    pos = t.child_position(v)
    link = min(int(t.sibling[v][pos[u], pos[w]]), 2 * int(t.delta[v]))
    return int(dp - rd[u] + link + dq - rd[w])


def distance_matrix(t: Slhst) -> np.ndarray:
    """All-pairs SLHST distances over the points."""
    n = t.n_points
    out = np.zeros((n, n), dtype=np.int64)
    rd = t.root_distance
    below = t.leaves_below
    lp = t.leaf_of_point
    for v in t.inner:
        ch = t.children[v]
        if ch.size < 2:
            continue
        link = np.minimum(t.sibling[v], 2 * t.delta[v])
        pts = [below[u] for u in ch]
        up = [rd[lp[ps]] - rd[u] for ps, u in zip(pts, ch)]
        for i in range(ch.size):
            for j in range(i + 1, ch.size):
                block = up[i][:, None] + link[i, j] + up[j][None, :]
                out[np.ix_(pts[i], pts[j])] = block
                out[np.ix_(pts[j], pts[i])] = block.T
    return out


@dataclass(frozen=True)
class TreeReport:
    max_degree: int
    sum_children: int
    sum_children_sq: int
    depth: int
    n_inner: int


def degree_and_size_report(t: Slhst) -> TreeReport:
    sizes = np.array([t.children[v].size for v in t.inner], dtype=np.int64)
    return TreeReport(
        max_degree=int(sizes.max()) if sizes.size else 0,
        sum_children=int(sizes.sum()),
        sum_children_sq=int((sizes**2).sum()),
        depth=int(t.depth.max()),
        n_inner=int(sizes.size),
    )
