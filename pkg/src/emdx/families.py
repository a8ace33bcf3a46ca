"""Families of dominating trees over the sibling metric of each inner vertex.

Min mode keeps s = ceil(c1 log2 n) trees and scores a vertex by the smallest
tree cost.  Average mode keeps s = ceil(c2 |children| log2 |children|) trees
and exposes the linear map h_v whose l1 norm is the mean tree cost.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .metric import FiniteMetric
from .partition import DominatingTree, frt_tree

MODES = ("min", "avg")
_MODE_TAG = {"min": 1, "avg": 2}


def family_size(mode: str, n_children: int, n_points: int, c1: float = 4.0, c2: float = 2.0) -> int:
    if mode == "min":
        return max(1, math.ceil(c1 * math.log2(max(n_points, 2))))
    if mode == "avg":
        return max(1, math.ceil(c2 * n_children * math.log2(max(n_children, 2))))
    raise ValueError(f"unknown family mode {mode!r}")


def tree_seed(master_seed: int, mode: str, vertex: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), 1, _MODE_TAG[mode], int(vertex), int(index)])


@dataclass(frozen=True, eq=False)
class DominatingTreeFamily:
    vertex: int
    mode: str
    delta: int
    trees: tuple

    @property
    def s(self) -> int:
        return len(self.trees)

    @property
    def n_children(self) -> int:
        return self.trees[0].n_items

    @cached_property
    def layout(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(coef, tree index, membership) per coordinate of h_v.

        One coordinate per non-root node of every tree, weighted by the edge
        above it, then one surplus coordinate per tree weighted by delta.
        """
        coef, owner, member = [], [], []
        k = self.n_children
        for i, tr in enumerate(self.trees):
            coef.append(tr.weight[1:])
            owner.append(np.full(tr.n_nodes - 1, i))
            member.append(tr.membership[1:])
        for i in range(self.s):
            coef.append(np.array([self.delta]))
            owner.append(np.array([i]))
            member.append(np.ones((1, k), dtype=bool))
        return (
            np.concatenate(coef).astype(np.int64),
            np.concatenate(owner).astype(np.int64),
            np.concatenate(member).astype(np.int64),
        )

    @property
    def dim(self) -> int:
        return self.layout[0].size

    def tree_emds(self, mu_hat, nu_hat) -> np.ndarray:
        coef, owner, member = self.layout
        diff = np.asarray(mu_hat, dtype=np.int64) - np.asarray(nu_hat, dtype=np.int64)
        return np.bincount(owner, weights=coef * np.abs(member @ diff), minlength=self.s).astype(np.int64)

    def weight(self, mu_hat, nu_hat) -> float:
        costs = self.tree_emds(mu_hat, nu_hat)
        return float(costs.min()) if self.mode == "min" else float(costs.mean())

    def apply_h_int(self, mu_hat) -> np.ndarray:
        """s * h_v(mu_hat): exact integer coordinates."""
        coef, _, member = self.layout
        return coef * (member @ np.asarray(mu_hat, dtype=np.int64))

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        sizes = np.array([t.n_nodes for t in self.trees], dtype=np.int64)
        parent = np.concatenate([t.parent for t in self.trees])
        weight = np.concatenate([t.weight for t in self.trees])
        leaves = np.concatenate([t.leaves for t in self.trees])
        return sizes, parent, weight, leaves


def apply_h(fam: DominatingTreeFamily, mu_hat) -> np.ndarray:
    """h_v(mu_hat) for an average-mode family."""
    if fam.mode != "avg":
        raise ValueError("h_v is only defined for average-mode families")
    return fam.apply_h_int(mu_hat) / fam.s


def _build(sibling: np.ndarray, delta: int, s: int, mode: str, master_seed: int, vertex: int):
    if sibling is None or sibling.shape[0] == 1:
        single = DominatingTree(np.array([-1]), np.array([0]), np.array([0]))
        return DominatingTreeFamily(vertex, mode, int(delta), (single,) * s)
    dv = FiniteMetric(sibling)
    trees = tuple(
        frt_tree(dv, seed=tree_seed(master_seed, mode, vertex, i)).compressed() for i in range(s)
    )
    return DominatingTreeFamily(vertex, mode, int(delta), trees)


def build_family_min(sibling, delta: int, n_points: int, seed: int, vertex: int = 0, c1: float = 4.0):
    k = 1 if sibling is None else sibling.shape[0]
    return _build(sibling, delta, family_size("min", k, n_points, c1=c1), "min", seed, vertex)


def build_family_avg(sibling, delta: int, seed: int, vertex: int = 0, c2: float = 2.0):
    k = 1 if sibling is None else sibling.shape[0]
    return _build(sibling, delta, family_size("avg", k, 0, c2=c2), "avg", seed, vertex)


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("EMDX_THREADS", "1")))
    except ValueError:
        return 1


def build_families(t, mode: str, seed: int, c1: float = 4.0, c2: float = 2.0, threads: int | None = None):
    """One family per inner vertex of ``t``, in canonical order.

    Each tree draws from its own (seed, mode, vertex, index) stream, so the
    result does not depend on the thread count.
    """
    threads = thread_count() if threads is None else threads

    def one(i):
        v = int(t.inner[i])
        if mode == "min":
            return build_family_min(t.sibling[v], t.delta[v], t.n_points, seed, i, c1=c1)
        return build_family_avg(t.sibling[v], t.delta[v], seed, i, c2=c2)

    idx = range(t.inner.size)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, idx))
    return [one(i) for i in idx]


class FamilyBank:
    """All families of one SLHST stacked into a single sparse map from
    SLHST vertex masses to h coordinates."""

    def __init__(self, t, families):
        self.t = t
        self.families = list(families)
        if len(self.families) != t.inner.size:
            raise ValueError("need exactly one family per inner vertex")
        rows, cols, coef, group, scale = [], [], [], [], []
        offsets = [0]
        gbase = 0
        for i, fam in enumerate(self.families):
            c, owner, member = fam.layout
            ch = t.children[t.inner[i]]
            r, j = np.nonzero(member)
            rows.append(r + offsets[-1])
            cols.append(ch[j])
            coef.append(c)
            group.append(owner + gbase)
            scale.append(np.full(c.size, fam.s, dtype=np.int64))
            offsets.append(offsets[-1] + c.size)
            gbase += fam.s
        self.offsets = np.array(offsets, dtype=np.int64)
        self.coef = np.concatenate(coef) if coef else np.zeros(0, dtype=np.int64)
        self.group = np.concatenate(group) if group else np.zeros(0, dtype=np.int64)
        self.scale = np.concatenate(scale) if scale else np.zeros(0, dtype=np.int64)
        self.group_start = np.concatenate([[0], np.cumsum([f.s for f in self.families])]).astype(np.int64)
        nr = int(self.offsets[-1])
        r = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        c = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
        self.matrix = sp.csr_matrix(
            (np.ones(r.size, dtype=np.int64), (r, c)), shape=(nr, t.n_vertices)
        )

    @property
    def dim(self) -> int:
        return int(self.offsets[-1])

    def tree_costs(self, mass_mu, mass_nu) -> np.ndarray:
        """Cost of every (vertex, tree) pair, flattened in family order."""
        diff = self.t.node_mass(mass_mu) - self.t.node_mass(mass_nu)
        contrib = self.coef * np.abs(self.matrix @ diff)
        ng = int(self.group_start[-1])
        return np.bincount(self.group, weights=contrib, minlength=ng).astype(np.int64)

    def weights(self, mass_mu, mass_nu, how: str = "min") -> np.ndarray:
        costs = self.tree_costs(mass_mu, mass_nu)
        if costs.size == 0:
            return costs.astype(float)
        starts = self.group_start[:-1]
        if how == "min":
            return np.minimum.reduceat(costs, starts).astype(float)
        return np.add.reduceat(costs, starts) / np.diff(self.group_start)

    def h_values(self, mass) -> np.ndarray:
        """Concatenation of h_{v_i}(mu-hat_{v_i}) over all inner vertices."""
        return self.coef * (self.matrix @ self.t.node_mass(mass)) / self.scale
