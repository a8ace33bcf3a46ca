"""Cauchy (1-stable) linear sketches of l1 vectors.

The sketch matrix is never stored.  Entry (row, col) is regenerated from a
counter-based hash of (seed, row, col), so two parties holding only the seed
produce identical sketches of the same data, and a sketch of a long vector
can be assembled from sketches of its pieces.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_CHUNK = 4096


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed: int, rows, cols) -> np.ndarray:
    """Uniform (0, 1) variates indexed by (seed, row, col); broadcasts rows
    against cols."""
    rows = np.asarray(rows, dtype=np.uint64)
    cols = np.asarray(cols, dtype=np.uint64)
    key = _mix(np.asarray([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64) + _GOLDEN)
    z = _mix(key ^ (rows * _GOLDEN + np.uint64(1)))
    z = _mix(z ^ (cols * _M2 + _GOLDEN))
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def cauchy_from_uniform(u):
    """Standard Cauchy quantile: tan(pi (u - 1/2))."""
    return np.tan(np.pi * (np.asarray(u, dtype=np.float64) - 0.5))


def cauchy_sample(seed: int, row: int, col: int) -> float:
    return float(cauchy_from_uniform(counter_uniform(seed, [row], [col]))[0])


def cauchy_block(seed: int, rows, cols) -> np.ndarray:
    """Matrix of sketch coefficients, shape (len(rows), len(cols))."""
    rows = np.asarray(rows)[:, None]
    cols = np.asarray(cols)[None, :]
    return cauchy_from_uniform(counter_uniform(seed, rows, cols))


@dataclass(frozen=True)
class SketchSpec:
    dim: int
    k: int
    seed: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("sketch needs at least one row")

    @classmethod
    def for_accuracy(cls, dim: int, rho: float, c: float, seed: int) -> "SketchSpec":
        """k = c / rho^2 rows."""
        return cls(dim, max(1, int(round(c / rho**2))), seed)

    def header(self) -> bytes:
        return struct.pack("<QIQ", self.dim, self.k, self.seed & 0xFFFFFFFFFFFFFFFF)


def sketch_segment(spec: SketchSpec, x, offset: int = 0) -> np.ndarray:
    """Extended-precision sketch of x placed at columns offset..offset+len(x).

    Zero entries are skipped; they contribute exactly nothing.
    """
    x = np.asarray(x, dtype=np.float64)
    acc = np.zeros(spec.k, dtype=np.longdouble)
    nz = np.flatnonzero(x)
    rows = np.arange(spec.k)
    for start in range(0, nz.size, _CHUNK):
        cols = nz[start : start + _CHUNK]
        g = cauchy_block(spec.seed, rows, cols + offset).astype(np.longdouble)
        acc += (g * x[cols].astype(np.longdouble)).sum(axis=1)
    return acc


def sketch_apply(spec: SketchSpec, x) -> np.ndarray:
    """g(x): k inner products with streamed Cauchy rows."""
    x = np.asarray(x)
    if x.shape != (spec.dim,):
        raise ValueError(f"expected a vector of length {spec.dim}, got shape {x.shape}")
    return sketch_segment(spec, x).astype(np.float64)


def median_estimate(v) -> float:
    """Median of |g_i| (lower median for even k): estimates |x|_1."""
    a = np.abs(np.asarray(v, dtype=np.float64))
    if a.size == 0:
        raise ValueError("empty sketch")
    mid = (a.size - 1) // 2
    return float(np.partition(a, mid)[mid])


def is_rho_good(v, norm: float, rho: float) -> bool:
    est = median_estimate(v)
    return (1 - rho) * norm <= est <= (1 + rho) * norm


def sketch_to_bytes(v) -> bytes:
    return np.asarray(v, dtype="<f8").tobytes()


def sketch_from_bytes(buf: bytes) -> np.ndarray:
    return np.frombuffer(buf, dtype="<f8").astype(np.float64)
