"""Binary sampling tree, linear encodings and the two EMD estimators.

An encoding of a distribution holds, for every node S of a fixed balanced
interval tree over the inner vertices v_1..v_N, a Cauchy sketch of the
concatenated vectors h_{v_i}(mu-hat_{v_i}) for i in S, followed by the raw
sub-distributions mu-hat_{v_i}.  The sketch is linear and its columns are
indexed globally, so each vertex is sketched once and node blocks are sums
of their children.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .families import FamilyBank
from .metric import Distribution
from .sketch import SketchSpec, median_estimate, sketch_segment
from .transport import eemd, importance_estimate

ENC_MAGIC = b"EMDE"
ENC_VERSION = 1
_ENC_HEAD = struct.Struct("<4sH32sIIIQQ")


class EncodingMismatch(ValueError):
    """Encodings (or an encoding and a container) do not belong together."""


class BinarySamplingTree:
    """Balanced interval tree over indices 0..N-1, nodes in breadth-first
    order.  A node [lo, hi) splits into [lo, lo + ceil(len/2)) and the rest."""

    def __init__(self, n_items: int):
        self.n_items = int(n_items)
        lo, hi, left, right = [], [], [], []
        if self.n_items:
            lo.append(0)
            hi.append(self.n_items)
        head = 0
        while head < len(lo):
            a, b = lo[head], hi[head]
            if b - a > 1:
                mid = a + (b - a + 1) // 2
                left.append(len(lo))
                lo.append(a)
                hi.append(mid)
                right.append(len(lo))
                lo.append(mid)
                hi.append(b)
            else:
                left.append(-1)
                right.append(-1)
            head += 1
        self.lo = np.array(lo, dtype=np.int64)
        self.hi = np.array(hi, dtype=np.int64)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.leaf_node = -np.ones(self.n_items, dtype=np.int64)
        leaves = np.flatnonzero(self.left < 0)
        self.leaf_node[self.lo[leaves]] = leaves

    @property
    def n_nodes(self) -> int:
        return self.lo.size

    @property
    def depth(self) -> int:
        return max(0, math.ceil(math.log2(self.n_items))) if self.n_items else 0

    def total_size(self) -> int:
        return int((self.hi - self.lo).sum())


def sketch_blocks(x: np.ndarray, offsets: np.ndarray, spec: SketchSpec, tree: BinarySamplingTree) -> np.ndarray:
    """f(x_1, ..., x_N): one sketch per tree node of the concatenation of the
    x_i in that node, where x_i = x[offsets[i]:offsets[i+1]]."""
    acc = np.zeros((tree.n_nodes, spec.k), dtype=np.longdouble)
    for i in range(tree.n_items):
        a, b = int(offsets[i]), int(offsets[i + 1])
        acc[tree.leaf_node[i]] = sketch_segment(spec, x[a:b], a)
    for node in range(tree.n_nodes - 1, -1, -1):
        if tree.left[node] >= 0:
            acc[node] = acc[tree.left[node]] + acc[tree.right[node]]
    return acc.astype(np.float64)


def encode_vectors(vectors, spec: SketchSpec) -> np.ndarray:
    """Sketch blocks for an explicit list of vectors."""
    offsets = np.concatenate([[0], np.cumsum([len(v) for v in vectors])]).astype(np.int64)
    x = np.concatenate([np.asarray(v, dtype=np.float64) for v in vectors]) if vectors else np.zeros(0)
    return sketch_blocks(x, offsets, spec, BinarySamplingTree(len(vectors)))


@dataclass(eq=False)
class Encoding:
    slhst_id: bytes
    n: int
    k: int
    seed: int
    blocks: np.ndarray
    raw: np.ndarray

    @property
    def n_inner(self) -> int:
        return (self.blocks.shape[0] + 1) // 2 if self.blocks.shape[0] else 0

    def to_bytes(self) -> bytes:
        head = _ENC_HEAD.pack(
            ENC_MAGIC,
            ENC_VERSION,
            self.slhst_id,
            self.n,
            self.n_inner,
            self.k,
            self.seed & 0xFFFFFFFFFFFFFFFF,
            self.raw.size,
        )
        return head + self.blocks.astype("<f8").tobytes() + self.raw.astype("<i8").tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Encoding":
        if buf[:4] != ENC_MAGIC:
            raise EncodingMismatch("not an EMDE encoding")
        magic, version, ident, n, nn, k, seed, nraw = _ENC_HEAD.unpack_from(buf)
        if version != ENC_VERSION:
            raise EncodingMismatch(f"unsupported encoding version {version}")
        nodes = 2 * nn - 1 if nn else 0
        off = _ENC_HEAD.size
        expect = off + nodes * k * 8 + nraw * 8
        if len(buf) != expect:
            raise EncodingMismatch(f"encoding has {len(buf)} bytes, expected {expect}")
        blocks = np.frombuffer(buf, dtype="<f8", count=nodes * k, offset=off).reshape(nodes, k)
        raw = np.frombuffer(buf, dtype="<i8", count=nraw, offset=off + nodes * k * 8)
        return cls(ident, n, k, seed, blocks.astype(np.float64), raw.astype(np.int64))

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def raw_offsets(t) -> np.ndarray:
    sizes = [t.children[v].size for v in t.inner]
    return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)


def encode(t, bank: FamilyBank, mu: Distribution, spec: SketchSpec) -> Encoding:
    """F_T(mu): sketch blocks of f(h_{v_1}(mu-hat), ..., h_{v_N}(mu-hat))
    followed by the raw sub-distributions."""
    if bank.t is not t:
        raise EncodingMismatch("families were built for a different SLHST")
    if any(f.mode != "avg" for f in bank.families):
        raise EncodingMismatch("encoding needs average-mode families")
    if spec.dim != bank.dim:
        raise EncodingMismatch(f"sketch dimension {spec.dim} != h dimension {bank.dim}")
    if mu.n != t.n_points:
        raise EncodingMismatch("distribution length does not match the SLHST")
    x = bank.h_values(mu.mass)
    tree = BinarySamplingTree(t.inner.size)
    blocks = sketch_blocks(x, bank.offsets, spec, tree)
    node_mass = t.node_mass(mu.mass)
    kids = np.concatenate([t.children[v] for v in t.inner]) if t.inner.size else np.zeros(0, dtype=np.int64)
    return Encoding(t.ident, t.n_points, spec.k, spec.seed, blocks, node_mass[kids].astype(np.int64))


@dataclass
class ReadCounter:
    blocks: int = 0
    raw: int = 0

    def entries(self, k: int) -> int:
        return self.blocks * k + self.raw


class EncodingReader:
    """Read access to one encoding that counts what it touches."""

    def __init__(self, enc: Encoding, offsets: np.ndarray):
        self.enc = enc
        self.offsets = offsets
        self.count = ReadCounter()

    def block(self, node: int) -> np.ndarray:
        self.count.blocks += 1
        return self.enc.blocks[node]

    def sub_distribution(self, i: int) -> np.ndarray:
        a, b = int(self.offsets[i]), int(self.offsets[i + 1])
        self.count.raw += b - a
        return self.enc.raw[a:b]


class DiffBlocks:
    """f_mu - f_nu, materialized one block at a time."""

    def __init__(self, mu: EncodingReader, nu: EncodingReader):
        self.mu, self.nu = mu, nu

    def block(self, node: int) -> np.ndarray:
        return self.mu.block(node) - self.nu.block(node)

    def weight(self, node: int) -> float:
        return median_estimate(self.block(node))


class CachedWeights:
    """Node weights of a fixed set of difference blocks, computed once."""

    def __init__(self, blocks: np.ndarray):
        self.blocks = blocks
        self._w = {}

    def weight(self, node: int) -> float:
        w = self._w.get(node)
        if w is None:
            w = self._w[node] = median_estimate(self.blocks[node])
        return w


@dataclass(frozen=True)
class SampleOutcome:
    index: int
    prob: float

    @property
    def is_zero(self) -> bool:
        return self.index < 0


ZERO = SampleOutcome(-1, 0.0)


def b_import_sample(diff, tree: BinarySamplingTree, rng: np.random.Generator) -> SampleOutcome:
    """Walk root to leaf, stepping into each child with probability
    proportional to its estimated l1 weight.

    Returns the reached index and the product of the chosen ratios, which is
    exactly the probability of reaching it.  If both children of the root
    weigh zero the encodings agree and ZERO is returned; deeper 0/0 splits
    descend uniformly.
    """
    if tree.n_items == 0:
        return ZERO
    node, prob = 0, 1.0
    while tree.left[node] >= 0:
        left, right = int(tree.left[node]), int(tree.right[node])
        w1, w2 = diff.weight(left), diff.weight(right)
        u = rng.random()
        total = w1 + w2
        if total == 0:
            if node == 0:
                return ZERO
            ratio1 = ratio2 = 0.5
        else:
            ratio1, ratio2 = w1 / total, w2 / total
        if u < ratio1:
            node, prob = left, prob * ratio1
        else:
            node, prob = right, prob * ratio2
    return SampleOutcome(int(tree.lo[node]), prob)


def default_rounds(n: int) -> int:
    """ceil(log2(n)^2) estimator rounds."""
    return max(1, math.ceil(math.log2(max(n, 2)) ** 2))


def default_linear_samples(n: int, c: float = 8.0) -> int:
    return max(1, math.ceil(c * math.log2(max(n, 2))))


def round_rng(seed: int, r: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), 7, int(r)]))


def check_pair(t, enc_mu: Encoding, enc_nu: Encoding) -> None:
    for e in (enc_mu, enc_nu):
        if e.slhst_id != t.ident:
            raise EncodingMismatch("encoding was built for a different SLHST")
    if (enc_mu.k, enc_mu.seed) != (enc_nu.k, enc_nu.seed):
        raise EncodingMismatch("encodings use different sketch parameters")
    if enc_mu.blocks.shape != enc_nu.blocks.shape or enc_mu.raw.shape != enc_nu.raw.shape:
        raise EncodingMismatch("encoding shapes differ")


@dataclass
class RoundTrace:
    index: int
    prob: float
    block_entries: int
    raw_entries: int


def approx_emd(
    t,
    enc_mu: Encoding,
    enc_nu: Encoding,
    samples: int | None = None,
    seed: int = 0,
    trace: list | None = None,
) -> float:
    """Sublinear EMD estimate from two encodings.

    Each round samples a vertex by binary importance sampling over f_mu -
    f_nu, reads the two raw sub-distributions at that vertex and adds their
    exact EEMD divided by the sampling probability.
    """
    check_pair(t, enc_mu, enc_nu)
    rounds = default_rounds(t.n_points) if samples is None else int(samples)
    if t.inner.size == 0:
        return 0.0
    offsets = raw_offsets(t)
    tree = BinarySamplingTree(t.inner.size)
    ra, rb = EncodingReader(enc_mu, offsets), EncodingReader(enc_nu, offsets)
    diff = DiffBlocks(ra, rb)
    total = 0.0
    for r in range(rounds):
        before = ra.count.entries(enc_mu.k) + rb.count.entries(enc_mu.k)
        raw_before = ra.count.raw + rb.count.raw
        out = b_import_sample(diff, tree, round_rng(seed, r))
        if out.is_zero:
            if trace is not None:
                spent = ra.count.entries(enc_mu.k) + rb.count.entries(enc_mu.k) - before
                trace.append(RoundTrace(-1, 0.0, spent, 0))
            return 0.0
        v = int(t.inner[out.index])
        cost = eemd(t.sibling[v], int(t.delta[v]), ra.sub_distribution(out.index), rb.sub_distribution(out.index))
        total += cost / out.prob
        if trace is not None:
            raw = ra.count.raw + rb.count.raw - raw_before
            spent = ra.count.entries(enc_mu.k) + rb.count.entries(enc_mu.k) - before
            trace.append(RoundTrace(out.index, out.prob, spent - raw, raw))
    return total / rounds


def estimate_emd_linear(
    t,
    bank: FamilyBank,
    mu: Distribution,
    nu: Distribution,
    samples: int | None = None,
    seed: int = 0,
) -> float:
    """Near-linear-time estimate: weight every vertex by its cheapest tree
    cost, importance-sample vertices by weight and average exact EEMD / p."""
    if mu.denominator != nu.denominator:
        raise ValueError(f"denominator mismatch: {mu.denominator} vs {nu.denominator}")
    if bank.t is not t:
        raise EncodingMismatch("families were built for a different SLHST")
    if t.inner.size == 0:
        return 0.0
    w = bank.weights(mu.mass, nu.mass, "min")
    total = w.sum()
    if total == 0:
        return 0.0
    m = default_linear_samples(t.n_points) if samples is None else int(samples)
    a, b = t.node_mass(mu.mass), t.node_mass(nu.mass)

    def term(i):
        v = int(t.inner[i])
        ch = t.children[v]
        return eemd(t.sibling[v], int(t.delta[v]), a[ch], b[ch])

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 5]))
    return importance_estimate(w / total, term, m, rng)
