import numpy as np
import pytest

from emdx.formats import (
    FormatError,
    pack_arrays,
    read_distribution,
    read_metric_table,
    unpack_arrays,
    write_distribution,
    write_metric,
)
from emdx.metric import Distribution, load_metric
from emdx.synthetic import cloud_metric


@pytest.mark.parametrize("fmt", ["bin", "csv"])
def test_metric_round_trip(tmp_path, fmt):
    m = cloud_metric(12, seed=3)
    p = tmp_path / f"m.{fmt}"
    write_metric(m, p, fmt)
    assert load_metric(p) == m
    assert np.array_equal(read_metric_table(p), m.dist)


@pytest.mark.parametrize("fmt", ["bin", "json"])
def test_distribution_round_trip(tmp_path, fmt, rng):
    mu = Distribution.random(9, 81, rng)
    p = tmp_path / "mu"
    write_distribution(mu, p, fmt)
    assert read_distribution(p) == mu


def test_bad_inputs(tmp_path):
    p = tmp_path / "x"
    p.write_text("0,1\n1,0,2\n")
    with pytest.raises(FormatError):
        read_metric_table(p)
    p.write_text("[1, 2]")
    with pytest.raises(FormatError):
        read_distribution(p)
    p.write_text("{nope")
    with pytest.raises(FormatError):
        read_distribution(p)


def test_pack_arrays_deterministic():
    arrs = {"b": np.arange(5), "a": np.ones((2, 3))}
    buf = pack_arrays(b"TEST", {"x": 1}, arrs)
    assert buf == pack_arrays(b"TEST", {"x": 1}, dict(reversed(list(arrs.items()))))
    meta, back = unpack_arrays(b"TEST", buf)
    assert meta == {"x": 1}
    assert np.array_equal(back["a"], arrs["a"]) and np.array_equal(back["b"], arrs["b"])
    with pytest.raises(FormatError):
        unpack_arrays(b"NOPE", buf)
