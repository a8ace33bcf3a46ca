import csv
import io
import math

import numpy as np
import pytest

from emdx import pipeline
from emdx.encoding import EncodingMismatch, default_rounds
from emdx.formats import FormatError
from emdx.metric import Distribution, load_metric
from emdx.synthetic import cloud_metric, grid_metric, line_metric, make_metric
from emdx.transport import emd_exact


@pytest.fixture(scope="module")
def small():
    m = cloud_metric(48, seed=11)
    c = pipeline.preprocess(m, seed=4, k=64)
    rng = np.random.default_rng(5)
    dists = [Distribution.random(48, 48**2, rng) for _ in range(3)]
    return m, c, dists


def test_degenerate_container():
    c = pipeline.preprocess(line_metric(1))
    back = pipeline.PreprocessContainer.from_bytes(c.to_bytes())
    assert back.to_bytes() == c.to_bytes()
    mu = Distribution.point_mass(1, 0, 1)
    assert pipeline.query(c, mu, mu)["D"] == 0
    e = pipeline.encode(c, mu)
    assert pipeline.estimate(c, e, e) == 0
    assert pipeline.simulate_protocol(c, mu, mu).D == 0


def test_container_determinism_and_round_trip(small):
    m, c, dists = small
    again = pipeline.preprocess(m, seed=4, k=64)
    assert again.to_bytes() == c.to_bytes()
    back = pipeline.PreprocessContainer.from_bytes(c.to_bytes())
    assert back.to_bytes() == c.to_bytes()
    e1, e2 = pipeline.encode(c, dists[0]), pipeline.encode(back, dists[0])
    assert e1.to_bytes() == e2.to_bytes()
    f1, f2 = pipeline.encode(c, dists[1]), pipeline.encode(back, dists[1])
    assert pipeline.estimate(c, e1, f1, seed=2) == pipeline.estimate(back, e2, f2, seed=2)
    assert pipeline.query(c, *dists[:2], seed=1)["D"] == pipeline.query(back, *dists[:2], seed=1)["D"]
    assert pipeline.preprocess(m, seed=5, k=64).to_bytes() != c.to_bytes()


def test_container_rejects_garbage(small):
    _, c, _ = small
    with pytest.raises(FormatError):
        pipeline.PreprocessContainer.from_bytes(b"EMDE" + c.to_bytes()[4:])


def test_mode_restrictions():
    m = cloud_metric(10, seed=1)
    c = pipeline.preprocess(m, mode="min")
    mu = Distribution.point_mass(10, 0, 100)
    with pytest.raises(ValueError):
        pipeline.encode(c, mu)
    with pytest.raises(ValueError):
        pipeline.preprocess(m, mode="max")


def test_query_examples(small):
    m, c, dists = small
    assert pipeline.query(c, dists[0], dists[0])["D"] == 0
    bad = Distribution.point_mass(48, 0, 7)
    with pytest.raises(ValueError, match="denominator"):
        pipeline.query(c, dists[0], bad)
    two = load_metric([[0, 6], [6, 0]])
    c2 = pipeline.preprocess(two)
    a, b = Distribution.point_mass(2, 0, 1), Distribution.point_mass(2, 1, 1)
    for s in range(5):
        assert pipeline.query(c2, a, b, seed=s)["D"] >= 0.5 * 6


def test_encode_estimate_examples(small):
    _, c, dists = small
    e0, e1 = pipeline.encode(c, dists[0]), pipeline.encode(c, dists[1])
    assert pipeline.estimate(c, e0, e0) == 0
    assert pipeline.estimate(c, e0, e1, seed=9) == pipeline.estimate(c, e1, e0, seed=9)
    N = c.slhst.inner.size
    expect = (2 * N - 1) * c.sketch_k * 8 + e0.raw.size * 8
    assert 0 <= len(e0.to_bytes()) - expect < 100
    other = pipeline.preprocess(cloud_metric(48, seed=11), seed=99, k=64)
    with pytest.raises(EncodingMismatch):
        pipeline.estimate(other, e0, e1)


def test_read_instrumentation(small):
    _, c, dists = small
    trace = []
    e0, e1 = pipeline.encode(c, dists[0]), pipeline.encode(c, dists[1])
    pipeline.estimate(c, e0, e1, trace=trace)
    N = c.slhst.inner.size
    lam = max(c.slhst.children[v].size for v in c.slhst.inner)
    depth = math.ceil(math.log2(N))
    for tr in trace:
        assert tr.block_entries <= 2 * 2 * depth * c.sketch_k
        assert tr.raw_entries <= 2 * lam


def test_protocol(small):
    _, c, dists = small
    mu, nu = dists[0], dists[1]
    e0, e1 = pipeline.encode(c, mu), pipeline.encode(c, nu)
    for seed in range(3):
        res = pipeline.simulate_protocol(c, mu, nu, seed=seed)
        assert res.D == pipeline.estimate(c, e0, e1, seed=seed)
        assert res.bytes_total <= res.bound
    same = pipeline.simulate_protocol(c, mu, mu)
    assert same.D == 0
    # root blocks only: two k-entry blocks, a stop bit and the reply
    assert same.bytes_a_to_b == 2 * c.sketch_k * 8
    other = pipeline.preprocess(cloud_metric(48, seed=11), seed=5, k=64)
    with pytest.raises(EncodingMismatch):
        pipeline.simulate_protocol(c, mu, nu, cb=other)


def test_oracle(small):
    m, _, dists = small
    store = pipeline.OracleStore.build(m, dists, k=64, seed=2)
    assert store.r == math.ceil(2 * math.log2(3))
    assert store.query(1, 1) == 0
    with pytest.raises(IndexError):
        store.query(0, 3)
    sizes = store.sizes()
    assert sizes["total_bytes"] == sum(sizes["container_bytes"]) + sum(sizes["encoding_bytes"])
    back = pipeline.OracleStore.from_bytes(store.to_bytes())
    assert back.query(0, 2, seed=1) == store.query(0, 2, seed=1)
    exact = [emd_exact(m, dists[0], dists[j])[0] for j in (1, 2)]
    for j, ex in zip((1, 2), exact):
        assert store.query(0, j) >= 0.5 * ex


def test_bench_empty_and_schema():
    assert pipeline.bench({"families": [], "n": []}) == []
    text = pipeline.bench_csv([])
    assert next(csv.reader(io.StringIO(text))) == pipeline.BENCH_COLUMNS
    with pytest.raises(ValueError):
        pipeline.check_bench_config({"bogus": 1})
    with pytest.raises(ValueError):
        pipeline.check_bench_config({"n": [0]})
    with pytest.raises(ValueError):
        make_metric("torus", 4)


def test_bench_runtime_monotone(tmp_path):
    rows = pipeline.bench({"families": ["grid"], "n": [64, 128, 256], "k": [32], "pairs": 1})
    assert [r["n"] for r in rows] == [64, 128, 256]
    t = [r["t_preprocess"] for r in rows]
    assert t == sorted(t)
    assert all(r["ratio_tree"] >= 1 for r in rows)
    p_csv, p_dat = pipeline.write_bench(rows, tmp_path)
    assert len(p_csv.read_text().splitlines()) == 4
    assert p_dat.read_text().startswith("# family")


def test_container_size_budget():
    m = grid_metric(16)
    c = pipeline.preprocess(m, seed=0)
    rep = pipeline.report(c)
    print("n=256 container bytes", rep["container_bytes"], "budget", rep["budget_bytes"])
    assert rep["within_budget"]


def test_default_rounds():
    assert default_rounds(256) == 64
