"""On-disk formats for metrics and distributions.

Metric, binary (all integers little-endian)::

    magic   4 bytes  b"EMDX"
    version u16      1
    n       u32
    dist    n*n u64  row-major

Metric, CSV: n rows of n comma-separated non-negative numbers.

Distribution, binary::

    magic       4 bytes  b"EMDD"
    version     u16      1
    n           u32
    denominator u64
    mass        n u64

Distribution, JSON: ``{"denominator": D, "mass": [m_0, ..., m_{n-1}]}``.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .metric import Distribution, FiniteMetric

METRIC_MAGIC = b"EMDX"
DIST_MAGIC = b"EMDD"
VERSION = 1


class FormatError(ValueError):
    """Malformed or mismatched file."""


def metric_to_bytes(m: FiniteMetric) -> bytes:
    head = METRIC_MAGIC + struct.pack("<HI", VERSION, m.n)
    return head + m.dist.astype("<u8").tobytes()


def metric_from_bytes(buf: bytes) -> np.ndarray:
    if buf[:4] != METRIC_MAGIC:
        raise FormatError("not an EMDX metric file")
    version, n = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported metric version {version}")
    body = buf[10:]
    if len(body) != 8 * n * n:
        raise FormatError(f"metric body has {len(body)} bytes, expected {8 * n * n}")
    return np.frombuffer(body, dtype="<u8").reshape(n, n).astype(np.int64)


def metric_to_csv(m: FiniteMetric) -> str:
    out = io.StringIO()
    for row in m.dist:
        out.write(",".join(str(int(x)) for x in row))
        out.write("\n")
    return out.getvalue()


def read_metric_table(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] == METRIC_MAGIC:
        return metric_from_bytes(data)
    rows = [r for r in data.decode().splitlines() if r.strip()]
    try:
        table = [[float(x) for x in r.split(",")] for r in rows]
    except ValueError as e:
        raise FormatError(f"unreadable CSV metric: {e}") from e
    if any(len(r) != len(table) for r in table):
        raise FormatError("CSV metric is not square")
    return np.array(table, dtype=float).reshape(len(table), len(table))


def write_metric(m: FiniteMetric, path, fmt: str = "bin") -> None:
    path = Path(path)
    if fmt == "csv":
        path.write_text(metric_to_csv(m))
    elif fmt == "bin":
        path.write_bytes(metric_to_bytes(m))
    else:
        raise FormatError(f"unknown metric format {fmt!r}")


def distribution_to_bytes(mu: Distribution) -> bytes:
    head = DIST_MAGIC + struct.pack("<HIQ", VERSION, mu.n, mu.denominator)
    return head + mu.mass.astype("<u8").tobytes()


def distribution_from_bytes(buf: bytes) -> Distribution:
    if buf[:4] != DIST_MAGIC:
        raise FormatError("not an EMDD distribution file")
    version, n, den = struct.unpack_from("<HIQ", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported distribution version {version}")
    body = buf[18:]
    if len(body) != 8 * n:
        raise FormatError("distribution body length mismatch")
    return Distribution(np.frombuffer(body, dtype="<u8").astype(np.int64), den)


def distribution_to_json(mu: Distribution) -> str:
    return json.dumps({"denominator": mu.denominator, "mass": [int(x) for x in mu.mass]})


def read_distribution(path) -> Distribution:
    data = Path(path).read_bytes()
    if data[:4] == DIST_MAGIC:
        return distribution_from_bytes(data)
    try:
        obj = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"unreadable distribution file: {e}") from e
    if not isinstance(obj, dict) or not {"mass", "denominator"} <= set(obj):
        raise FormatError("JSON distribution must be an object with 'mass' and 'denominator'")
    return Distribution(np.array(obj["mass"], dtype=np.int64), int(obj["denominator"]))


def write_distribution(mu: Distribution, path, fmt: str = "json") -> None:
    path = Path(path)
    if fmt == "json":
        path.write_text(distribution_to_json(mu))
    elif fmt == "bin":
        path.write_bytes(distribution_to_bytes(mu))
    else:
        raise FormatError(f"unknown distribution format {fmt!r}")


def pack_arrays(magic: bytes, meta: dict, arrays: dict) -> bytes:
    """Deterministic container: magic, u16 version, u32 header length, a
    sorted-key JSON header listing each array's dtype/shape/offset, then the
    raw little-endian array bytes in header order."""
    specs = {}
    chunks = []
    offset = 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        specs[name] = {"dtype": a.dtype.str, "shape": list(a.shape), "offset": offset}
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": specs}, sort_keys=True, separators=(",", ":"))
    hb = header.encode()
    return magic + struct.pack("<HI", VERSION, len(hb)) + hb + b"".join(chunks)


def unpack_arrays(magic: bytes, buf: bytes) -> tuple[dict, dict]:
    if buf[:4] != magic:
        raise FormatError(f"expected magic {magic!r}, found {buf[:4]!r}")
    version, hlen = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    header = json.loads(buf[10 : 10 + hlen])
    base = 10 + hlen
    arrays = {}
    for name, spec in header["arrays"].items():
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        start = base + spec["offset"]
        arrays[name] = np.frombuffer(buf, dtype=dt, count=count, offset=start).reshape(spec["shape"])
    return header["meta"], arrays
