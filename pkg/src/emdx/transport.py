"""Exact transport oracles.

Everything here works on integer masses and integer costs, so EMD and EEMD
values are exact integers in scaled units.  The solver is successive
shortest paths with node potentials on the complete bipartite residual
graph; a dense O(V^2) Dijkstra is the right shape for it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .metric import Distribution, FiniteMetric

_INF = np.int64(1) << np.int64(62)


@numba.njit(cache=True)
def _ssp(supply, demand, cost):
    m, n = cost.shape
    flow = np.zeros((m, n), dtype=np.int64)
    rem_s = supply.copy()
    rem_t = demand.copy()
    phi_s = np.zeros(m, dtype=np.int64)
    phi_t = np.empty(n, dtype=np.int64)
    for j in range(n):
        best = cost[0, j]
        for i in range(1, m):
            if cost[i, j] < best:
                best = cost[i, j]
        phi_t[j] = best
    inf = np.int64(1) << np.int64(62)
    dist_s = np.empty(m, dtype=np.int64)
    dist_t = np.empty(n, dtype=np.int64)
    done_s = np.empty(m, dtype=np.bool_)
    done_t = np.empty(n, dtype=np.bool_)
    pred_s = np.empty(m, dtype=np.int64)
    pred_t = np.empty(n, dtype=np.int64)
    left = rem_s.sum()
    while left > 0:
        # implicit super source with potential 0: its arc into an active
        # source has reduced cost -phi_s[i] >= 0
        for i in range(m):
            done_s[i] = False
            pred_s[i] = -1
            dist_s[i] = -phi_s[i] if rem_s[i] > 0 else inf
        for j in range(n):
            done_t[j] = False
            pred_t[j] = -1
            dist_t[j] = inf
        target = -1
        reach = inf
        while True:
            best = inf
            bi = -1
            side = 0
            for i in range(m):
                if not done_s[i] and dist_s[i] < best:
                    best = dist_s[i]
                    bi = i
                    side = 0
            for j in range(n):
                if not done_t[j] and dist_t[j] < best:
                    best = dist_t[j]
                    bi = j
                    side = 1
            if bi < 0:
                break
            if side == 0:
                i = bi
                done_s[i] = True
                base = dist_s[i] + phi_s[i]
                for j in range(n):
                    if not done_t[j]:
                        nd = base + cost[i, j] - phi_t[j]
                        if nd < dist_t[j]:
                            dist_t[j] = nd
                            pred_t[j] = i
            else:
                j = bi
                done_t[j] = True
                if rem_t[j] > 0:
                    target = j
                    reach = dist_t[j]
                    break
                base = dist_t[j] + phi_t[j]
                for i in range(m):
                    if not done_s[i] and flow[i, j] > 0:
                        nd = base - cost[i, j] - phi_s[i]
                        if nd < dist_s[i]:
                            dist_s[i] = nd
                            pred_s[i] = j
        if target < 0:
            raise ValueError("unbalanced transport problem")
        for i in range(m):
            phi_s[i] += dist_s[i] if dist_s[i] < reach else reach
        for j in range(n):
            phi_t[j] += dist_t[j] if dist_t[j] < reach else reach
        # bottleneck along the path
        j = target
        delta = rem_t[target]
        while True:
            i = pred_t[j]
            k = pred_s[i]
            if k < 0:
                if rem_s[i] < delta:
                    delta = rem_s[i]
                break
            if flow[i, k] < delta:
                delta = flow[i, k]
            j = k
        j = target
        while True:
            i = pred_t[j]
            flow[i, j] += delta
            k = pred_s[i]
            if k < 0:
                rem_s[i] -= delta
                break
            flow[i, k] -= delta
            j = k
        rem_t[target] -= delta
        left -= delta
    total = np.int64(0)
    for i in range(m):
        for j in range(n):
            total += flow[i, j] * cost[i, j]
    return total, flow


def transport(supply, demand, cost) -> tuple[int, np.ndarray]:
    """Exact balanced transportation: min <flow, cost> with the given
    row sums ``supply`` and column sums ``demand`` (all integers)."""
    a = np.ascontiguousarray(supply, dtype=np.int64)
    b = np.ascontiguousarray(demand, dtype=np.int64)
    c = np.ascontiguousarray(cost, dtype=np.int64)
    if c.shape != (a.size, b.size):
        raise ValueError(f"cost shape {c.shape} does not match ({a.size}, {b.size})")
    if (a < 0).any() or (b < 0).any():
        raise ValueError("negative mass")
    if a.sum() != b.sum():
        raise ValueError(f"unbalanced: supply {a.sum()} != demand {b.sum()}")
    rows, cols = np.flatnonzero(a), np.flatnonzero(b)
    flow = np.zeros(c.shape, dtype=np.int64)
    if rows.size == 0:
        return 0, flow
    total, sub = _ssp(a[rows], b[cols], np.ascontiguousarray(c[np.ix_(rows, cols)]))
    flow[np.ix_(rows, cols)] = sub
    return int(total), flow


@dataclass(frozen=True)
class TransportPlan:
    flow: np.ndarray
    cost: int


def emd_exact(m: FiniteMetric | np.ndarray, mu: Distribution, nu: Distribution) -> tuple[int, TransportPlan]:
    """Exact EMD (in units of distance x mass/denominator) with an optimal plan.

    Mass shared by both distributions at a point stays put: some optimal
    plan always does this on a metric, and it shrinks the flow problem to
    the disjoint supports.
    """
    if mu.denominator != nu.denominator:
        raise ValueError(f"denominator mismatch: {mu.denominator} vs {nu.denominator}")
    d = m.dist if isinstance(m, FiniteMetric) else np.asarray(m, dtype=np.int64)
    if not (d.shape[0] == mu.n == nu.n):
        raise ValueError("distribution length does not match the metric")
    common = np.minimum(mu.mass, nu.mass)
    cost, flow = transport(mu.mass - common, nu.mass - common, d)
    flow[np.diag_indices_from(flow)] += common
    return cost, TransportPlan(flow, cost)


def eemd(sibling: np.ndarray, delta: int, mu_hat, nu_hat) -> int:
    """Extended EMD over one vertex: children are matched at sibling-metric
    cost, and every unmatched unit (either side) pays ``delta``."""
    mu_hat = np.asarray(mu_hat, dtype=np.int64)
    nu_hat = np.asarray(nu_hat, dtype=np.int64)
    k = 1 if sibling is None else sibling.shape[0]
    if mu_hat.shape != (k,) or nu_hat.shape != (k,):
        raise ValueError(f"sub-distributions must have length {k}")
    common = np.minimum(mu_hat, nu_hat)
    a, b = mu_hat - common, nu_hat - common
    rows, cols = np.flatnonzero(a), np.flatnonzero(b)
    if rows.size == 0 or cols.size == 0:
        return int(delta) * int(a.sum() + b.sum())
    # extra source/sink stands for the parent vertex
    cost = np.empty((rows.size + 1, cols.size + 1), dtype=np.int64)
    cost[:-1, :-1] = sibling[np.ix_(rows, cols)]
    cost[:-1, -1] = delta
    cost[-1, :-1] = delta
    cost[-1, -1] = 0
    supply = np.append(a[rows], b.sum())
    demand = np.append(b[cols], a.sum())
    total, _ = _ssp(supply, demand, cost)
    return int(total)


def eemd_exact(t, v: int, mu_hat, nu_hat) -> int:
    """EEMD at inner vertex ``v`` of SLHST ``t``."""
    if t.children[v].size == 0:
        raise ValueError(f"vertex {v} is a leaf")
    return eemd(t.sibling[v], int(t.delta[v]), mu_hat, nu_hat)


def emd_slhst(t, mu: Distribution, nu: Distribution) -> int:
    """EMD over the SLHST metric as the sum of per-vertex EEMDs."""
    if mu.denominator != nu.denominator:
        raise ValueError("denominator mismatch")
    a, b = t.node_mass(mu.mass), t.node_mass(nu.mass)
    total = 0
    for v in t.inner:
        ch = t.children[v]
        if np.array_equal(a[ch], b[ch]):
            continue
        total += eemd(t.sibling[v], int(t.delta[v]), a[ch], b[ch])
    return total


def tree_emd(tree, mu_hat, nu_hat, delta: int) -> int:
    """Closed-form transport cost on a dominating tree.

    Every edge carries the imbalance of the subtree below it, and the total
    imbalance leaves through an extra edge of length ``delta`` at the root.
    """
    diff = np.asarray(mu_hat, dtype=np.int64) - np.asarray(nu_hat, dtype=np.int64)
    sub = tree.membership.astype(np.int64) @ diff
    return int((tree.weight * np.abs(sub)).sum() + int(delta) * abs(int(diff.sum())))


def importance_estimate(weights, terms, samples: int, rng: np.random.Generator) -> float:
    """Mean of ``samples`` draws of Z_i / p_i with i ~ p.

    ``terms`` is a sequence of term values or a callable i -> Z_i; a callable
    is evaluated once per distinct drawn index.
    """
    p = np.asarray(weights, dtype=float)
    total = p.sum()
    if total <= 0:
        raise ValueError("zero total sampling weight")
    if not np.isclose(total, 1.0):
        raise ValueError(f"sampling weights sum to {total}, not 1")
    draws = rng.choice(p.size, size=samples, p=p / total)
    cache = {}
    acc = 0.0
    for i in draws:
        i = int(i)
        if i not in cache:
            z = terms(i) if callable(terms) else terms[i]
            if p[i] <= 0:
                if z:
                    raise ValueError(f"term {i} is nonzero but has zero weight")
                cache[i] = 0.0
            else:
                cache[i] = z / p[i]
        acc += cache[i]
    return acc / samples
