import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from emdx.metric import Distribution, load_metric
from emdx.partition import DominatingTree, frt_tree
from emdx.slhst import Slhst, build_slhst, distance_matrix
from emdx.synthetic import cloud_metric
from emdx.transport import eemd, eemd_exact, emd_exact, emd_slhst, importance_estimate, transport, tree_emd

from oracles import augmented_tree_emd, emd_vertex_enumeration


def test_identity():
    m = cloud_metric(6, seed=1)
    mu = Distribution.from_weights(np.arange(1, 7), 36)
    cost, plan = emd_exact(m, mu, mu)
    assert cost == 0 and np.array_equal(np.diag(plan.flow), mu.mass)


def test_two_points():
    m = load_metric([[0, 3], [3, 0]])
    assert emd_exact(m, Distribution(np.array([1, 0]), 1), Distribution(np.array([0, 1]), 1))[0] == 3


def test_denominator_mismatch():
    m = load_metric([[0, 3], [3, 0]])
    with pytest.raises(ValueError, match="denominator"):
        emd_exact(m, Distribution(np.array([1, 0]), 1), Distribution(np.array([0, 2]), 2))


def test_vertex_enumeration_four_points(rng):
    for _ in range(50):
        m = cloud_metric(4, seed=int(rng.integers(1 << 30)))
        den = int(rng.integers(1, 13))
        mu, nu = Distribution.random(4, den, rng), Distribution.random(4, den, rng)
        cost, plan = emd_exact(m, mu, nu)
        assert cost == emd_vertex_enumeration(m.dist, mu.mass, nu.mass)
        assert (plan.flow.sum(1) == mu.mass).all() and (plan.flow.sum(0) == nu.mass).all()
        assert int((plan.flow * m.dist).sum()) == cost


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 10_000))
def test_transport_matches_lp(mr, nc, seed):
    rng = np.random.default_rng(seed)
    total = int(rng.integers(1, 60))
    a = np.bincount(rng.integers(0, mr, total), minlength=mr)
    b = np.bincount(rng.integers(0, nc, total), minlength=nc)
    c = rng.integers(0, 50, size=(mr, nc))
    cost, flow = transport(a, b, c)
    A = np.vstack([np.kron(np.eye(mr), np.ones(nc)), np.kron(np.ones(mr), np.eye(nc))])
    lp = linprog(c.ravel(), A_eq=A, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    assert cost == round(lp.fun)
    assert (flow >= 0).all() and (flow.sum(1) == a).all() and (flow.sum(0) == b).all()


def test_transport_rejects_unbalanced():
    with pytest.raises(ValueError):
        transport([1, 2], [2], [[1], [1]])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10_000))
def test_emd_is_a_metric(n, seed):
    rng = np.random.default_rng(seed)
    m = cloud_metric(n, seed=seed)
    den = n * n
    x, y, z = (Distribution.random(n, den, rng) for _ in range(3))
    dxy, dyz, dxz = emd_exact(m, x, y)[0], emd_exact(m, y, z)[0], emd_exact(m, x, z)[0]
    assert dxy == emd_exact(m, y, x)[0]
    assert dxz <= dxy + dyz


def test_eemd_examples():
    s = np.array([[0, 2], [2, 0]])
    assert eemd(s, 4, [1, 0], [1, 0]) == 0
    assert eemd(s, 4, [1, 0], [0, 1]) == 2
    assert eemd(s, 4, [1, 0], [0, 0]) == 4
    assert eemd(np.array([[0, 9], [9, 0]]), 4, [1, 0], [0, 1]) == 8


def hand_tree():
    # root 0 (delta 8) with children 1, 2; vertex 1 (delta 2) with leaves 3, 4; leaf 2 holds point 2
    return Slhst(
        n_points=3,
        parent=np.array([-1, 0, 0, 1, 1]),
        rank=np.array([0, 2, 2, 3, 3]),
        center=np.array([0, 0, 2, 0, 1]),
        delta=np.array([8, 2, 0, 0, 0]),
        leaf_point=np.array([-1, -1, 2, 0, 1]),
        sibling=[np.array([[0, 10], [10, 0]]), np.array([[0, 3], [3, 0]]), None, None, None],
        h=3,
        a=1,
        b=0,
        levels=(0, 2, 3),
        eps=1 / 3,
        alpha=1.0,
    )


def test_emd_slhst_hand_built():
    t = hand_tree()
    mu, nu = Distribution.point_mass(3, 0), Distribution.point_mass(3, 2)
    # vertex 1: surplus 1 pays 2; root: children masses (1,0) vs (0,1), link 10 < 16
    assert emd_slhst(t, mu, nu) == 2 + 10
    assert emd_slhst(t, mu, mu) == 0
    assert eemd_exact(t, 1, [1, 0], [0, 0]) == 2
    with pytest.raises(ValueError):
        eemd_exact(t, 3, [1], [1])
    assert emd_exact(distance_matrix(t), mu, nu)[0] == 12


def test_decomposition_random(rng):
    m = cloud_metric(32, seed=8)
    for seed in range(10):
        t = build_slhst(m, 1 / 3, seed=seed, alpha=0.7 if seed % 2 else None)
        mu, nu = Distribution.random(32, 1024, rng), Distribution.random(32, 1024, rng, support=5)
        assert emd_slhst(t, mu, nu) == emd_exact(distance_matrix(t), mu, nu)[0]
        assert emd_slhst(t, mu, nu) >= emd_exact(m, mu, nu)[0]


def test_tree_emd_star():
    star = DominatingTree(np.array([-1, 0, 0]), np.array([0, 3, 3]), np.array([1, 2]))
    assert tree_emd(star, [1, 0], [0, 1], 5) == 6
    assert tree_emd(star, [1, 1], [1, 1], 5) == 0
    assert tree_emd(star, [1, 0], [0, 0], 5) == 3 + 5


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40))
def test_tree_emd_closed_form(seed, delta):
    rng = np.random.default_rng(seed)
    m = cloud_metric(8, seed=seed)
    tree = frt_tree(m, seed=seed).compressed()
    a, b = rng.integers(0, 6, 8), rng.integers(0, 6, 8)
    assert tree_emd(tree, a, b, delta) == augmented_tree_emd(tree, a, b, delta)
    # with equal totals and a large root edge it is plain tree EMD, which
    # is eemd on the tree metric
    b2 = b.copy()
    b2[0] += a.sum() - b.sum()
    if (b2 >= 0).all():
        big = int(tree.distance_matrix().max())
        assert tree_emd(tree, a, b2, big) == eemd(tree.distance_matrix(), big, a, b2)


def test_importance_estimate_examples(rng):
    assert importance_estimate([1.0], [7.0], 5, rng) == 7.0
    z = np.array([1.0, 3.0, 6.0])
    assert np.allclose(importance_estimate(z / z.sum(), z, 50, rng), 10.0)
    with pytest.raises(ValueError):
        importance_estimate([0.0, 0.0], [1, 1], 3, rng)


def test_importance_estimate_concentration(rng):
    gamma = 4
    z = rng.exponential(size=30)
    q = z / z.sum()
    # weights within a factor gamma of the ideal ones
    p = q * rng.uniform(1 / gamma, 1, size=30)
    p /= p.sum()
    good = sum(abs(importance_estimate(p, z, 64 * gamma, rng) - z.sum()) <= 0.5 * z.sum() for _ in range(1000))
    assert good >= 950


def test_importance_estimate_unbiased(rng):
    z = rng.exponential(size=10)
    p = rng.uniform(0.2, 1, size=10)
    p /= p.sum()
    est = np.mean([importance_estimate(p, z, 20, rng) for _ in range(20000)])
    assert abs(est - z.sum()) <= 0.01 * z.sum()
