"""End-to-end pipelines: preprocessing container, estimators, two-party
protocol simulation, the distance-oracle store and the benchmark runner."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import __version__
from .encoding import (
    BinarySamplingTree,
    Encoding,
    EncodingMismatch,
    approx_emd,
    b_import_sample,
    check_pair,
    default_linear_samples,
    default_rounds,
    encode as encode_with,
    estimate_emd_linear,
    raw_offsets,
    round_rng,
)
from .families import DominatingTreeFamily, FamilyBank, build_families
from .formats import FormatError, metric_to_bytes, pack_arrays, unpack_arrays
from .metric import Distribution, FiniteMetric, default_denominator
from .partition import DominatingTree
from .sketch import SketchSpec, median_estimate
from .slhst import Slhst, build_slhst, degree_and_size_report
from .synthetic import make_metric
from .transport import eemd, emd_exact, emd_slhst

CONTAINER_MAGIC = b"EMDC"
ORACLE_MAGIC = b"EMDO"
MODE_CHOICES = ("min", "avg", "both")


def metric_hash(m: FiniteMetric) -> str:
    return hashlib.sha256(metric_to_bytes(m)).hexdigest()


def derive_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(tag)]).generate_state(1, np.uint64)[0])


def _family_arrays(prefix: str, fams) -> dict:
    s = np.array([f.s for f in fams], dtype=np.int64)
    parts = [f.arrays() for f in fams]

    def cat(i):
        return np.concatenate([p[i] for p in parts]) if parts else np.zeros(0, dtype=np.int64)

    return {
        f"{prefix}.s": s,
        f"{prefix}.sizes": cat(0),
        f"{prefix}.parent": cat(1),
        f"{prefix}.weight": cat(2),
        f"{prefix}.leaves": cat(3),
    }


def _families_from_arrays(prefix: str, mode: str, t: Slhst, arrays: dict) -> list:
    s = arrays[f"{prefix}.s"]
    sizes = arrays[f"{prefix}.sizes"]
    parent, weight, leaves = (arrays[f"{prefix}.{k}"] for k in ("parent", "weight", "leaves"))
    fams, ti, pos, lpos = [], 0, 0, 0
    for i, v in enumerate(t.inner):
        k = int(t.children[v].size)
        trees = []
        for _ in range(int(s[i])):
            nn = int(sizes[ti])
            trees.append(
                DominatingTree(
                    np.array(parent[pos : pos + nn], dtype=np.int64),
                    np.array(weight[pos : pos + nn], dtype=np.int64),
                    np.array(leaves[lpos : lpos + k], dtype=np.int64),
                )
            )
            ti += 1
            pos += nn
            lpos += k
        fams.append(DominatingTreeFamily(i, mode, int(t.delta[v]), tuple(trees)))
    return fams


@dataclass(eq=False)
class PreprocessContainer:
    metric_hash: str
    slhst: Slhst
    families: dict
    sketch_k: int
    sketch_seed: int
    manifest: dict = field(default_factory=dict)

    @cached_property
    def banks(self) -> dict:
        return {mode: FamilyBank(self.slhst, fams) for mode, fams in self.families.items()}

    def bank(self, mode: str) -> FamilyBank:
        if mode not in self.families:
            raise ValueError(f"container was preprocessed without {mode}-mode families")
        return self.banks[mode]

    @property
    def spec(self) -> SketchSpec:
        return SketchSpec(self.bank("avg").dim, self.sketch_k, self.sketch_seed)

    def to_bytes(self) -> bytes:
        meta = {
            "metric_hash": self.metric_hash,
            "slhst": self.slhst.meta(),
            "modes": sorted(self.families),
            "sketch_k": self.sketch_k,
            "sketch_seed": str(self.sketch_seed),
            "manifest": self.manifest,
        }
        arrays = dict(self.slhst.arrays())
        for mode, fams in self.families.items():
            arrays.update(_family_arrays(f"fam.{mode}", fams))
        return pack_arrays(CONTAINER_MAGIC, meta, arrays)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "PreprocessContainer":
        meta, arrays = unpack_arrays(CONTAINER_MAGIC, buf)
        try:
            t = Slhst.from_arrays(meta["slhst"], arrays)
            fams = {m: _families_from_arrays(f"fam.{m}", m, t, arrays) for m in meta["modes"]}
            return cls(
                meta["metric_hash"], t, fams, int(meta["sketch_k"]), int(meta["sketch_seed"]), meta["manifest"]
            )
        except (KeyError, IndexError, ValueError) as e:
            raise FormatError(f"corrupt container: {e}") from e

    def save(self, path) -> int:
        buf = self.to_bytes()
        Path(path).write_bytes(buf)
        return len(buf)

    @classmethod
    def load(cls, path) -> "PreprocessContainer":
        return cls.from_bytes(Path(path).read_bytes())


def size_budget(n: int, eps: float) -> float:
    """n^(1+eps) log2(n)^3 eight-byte words; the polylog is a soft allowance."""
    lg = math.log2(max(n, 2))
    return 8.0 * n ** (1 + eps) * lg**3


def preprocess(
    m: FiniteMetric,
    eps: float = 1 / 3,
    mode: str = "both",
    seed: int = 0,
    k: int = 256,
    c1: float = 4.0,
    c2: float = 2.0,
    threads: int | None = None,
) -> PreprocessContainer:
    if mode not in MODE_CHOICES:
        raise ValueError(f"mode must be one of {MODE_CHOICES}")
    t = build_slhst(m, eps, seed=derive_seed(seed, 0))
    modes = ("min", "avg") if mode == "both" else (mode,)
    fam_seed = derive_seed(seed, 1)
    fams = {md: build_families(t, md, fam_seed, c1=c1, c2=c2, threads=threads) for md in modes}
    rep = degree_and_size_report(t)
    manifest = {
        "version": __version__,
        "n": m.n,
        "eps": eps,
        "a": t.a,
        "b": t.b,
        "h": t.h,
        "alpha": t.alpha,
        "levels": list(t.levels),
        "seed": int(seed),
        "slhst_seed": str(derive_seed(seed, 0)),
        "family_seed": str(fam_seed),
        "c1": c1,
        "c2": c2,
        "k": k,
        "inner_vertices": int(t.inner.size),
        "max_degree": rep.max_degree,
        "family_trees": {md: int(sum(f.s for f in fams[md])) for md in modes},
    }
    return PreprocessContainer(metric_hash(m), t, fams, int(k), derive_seed(seed, 2), manifest)


def report(c: PreprocessContainer, size_bytes: int | None = None) -> dict:
    """Manifest plus measured sizes."""
    size = len(c.to_bytes()) if size_bytes is None else size_bytes
    out = dict(c.manifest)
    out["container_bytes"] = size
    out["budget_bytes"] = size_budget(c.slhst.n_points, c.slhst.eps)
    out["within_budget"] = size <= out["budget_bytes"]
    if "avg" in c.families:
        out["h_dim"] = c.bank("avg").dim
    out["slhst_id"] = c.slhst.ident.hex()
    return out


def _check_dists(c: PreprocessContainer, *dists: Distribution) -> None:
    for d in dists:
        if d.n != c.slhst.n_points:
            raise ValueError(f"distribution has {d.n} points, container has {c.slhst.n_points}")
    if len({d.denominator for d in dists}) > 1:
        raise ValueError("denominator mismatch: " + " vs ".join(str(d.denominator) for d in dists))


def query(c: PreprocessContainer, mu: Distribution, nu: Distribution, samples=None, seed: int = 0) -> dict:
    _check_dists(c, mu, nu)
    bank = c.bank("min")
    d = estimate_emd_linear(c.slhst, bank, mu, nu, samples=samples, seed=seed)
    w = bank.weights(mu.mass, nu.mass, "min")
    return {
        "D": float(d),
        "D_units": float(d) / mu.denominator,
        "denominator": mu.denominator,
        "samples": default_linear_samples(c.slhst.n_points) if samples is None else int(samples),
        "active_vertices": int(np.count_nonzero(w)),
        "weight_total": float(w.sum()),
    }


def encode(c: PreprocessContainer, mu: Distribution) -> Encoding:
    _check_dists(c, mu)
    return encode_with(c.slhst, c.bank("avg"), mu, c.spec)


def estimate(c: PreprocessContainer, e1: Encoding, e2: Encoding, samples=None, seed: int = 0, trace=None) -> float:
    return approx_emd(c.slhst, e1, e2, samples=samples, seed=seed, trace=trace)


class Channel:
    """Counts the bits crossing the wire in each direction."""

    def __init__(self):
        self.bits = {"a->b": 0, "b->a": 0}

    def send_array(self, direction: str, a: np.ndarray) -> np.ndarray:
        raw = np.ascontiguousarray(a).astype("<f8" if a.dtype.kind == "f" else "<i8").tobytes()
        self.bits[direction] += 8 * len(raw)
        return np.frombuffer(raw, dtype="<f8" if a.dtype.kind == "f" else "<i8").astype(a.dtype)

    def send_bit(self, direction: str, bit: bool) -> bool:
        self.bits[direction] += 1
        return bool(bit)

    def send_float(self, direction: str, x: float) -> float:
        return float(self.send_array(direction, np.array([x], dtype=np.float64))[0])

    @property
    def total_bytes(self) -> int:
        return sum(math.ceil(b / 8) for b in self.bits.values())


@dataclass
class ProtocolResult:
    D: float
    bytes_a_to_b: int
    bytes_b_to_a: int
    rounds: int
    bound: int

    @property
    def bytes_total(self) -> int:
        return self.bytes_a_to_b + self.bytes_b_to_a


def protocol_bound(c: PreprocessContainer, rounds: int) -> int:
    """M (2 depth k 8 + 2 max|children| 8) bytes, depth = ceil(log2 N)."""
    t = c.slhst
    depth = BinarySamplingTree(t.inner.size).depth if t.inner.size else 0
    lam = max((t.children[v].size for v in t.inner), default=0)
    return rounds * (2 * depth * c.sketch_k * 8 + 2 * lam * 8)


class _Party:
    def __init__(self, c: PreprocessContainer, enc: Encoding):
        self.t = c.slhst
        self.enc = enc
        self.offsets = raw_offsets(c.slhst)

    def raw(self, i: int) -> np.ndarray:
        return self.enc.raw[self.offsets[i] : self.offsets[i + 1]]


class _RemoteDiff:
    """Bob's view of f_mu - f_nu: Alice ships her block for each node Bob asks about."""

    def __init__(self, alice: _Party, bob: _Party, ch: Channel):
        self.alice, self.bob, self.ch = alice, bob, ch
        self.asked = 0

    def weight(self, node: int) -> float:
        self.asked += 1
        a = self.ch.send_array("a->b", self.alice.enc.blocks[node])
        return median_estimate(a - self.bob.enc.blocks[node])


def simulate_protocol(
    ca: PreprocessContainer,
    mu: Distribution,
    nu: Distribution,
    cb: PreprocessContainer | None = None,
    samples=None,
    seed: int = 0,
) -> ProtocolResult:
    """Alice holds mu, Bob holds nu, both hold the public container.

    Per round Alice sends the two child blocks at each level of the walk,
    Bob replies with one direction bit, and at the sampled vertex Alice sends
    her sub-distribution so Bob can solve the EEMD.  Bob finally sends D.
    """
    cb = ca if cb is None else cb
    if ca.to_bytes() != cb.to_bytes():
        raise EncodingMismatch("parties hold different preprocessing containers")
    _check_dists(ca, mu, nu)
    alice, bob = _Party(ca, encode(ca, mu)), _Party(cb, encode(cb, nu))
    check_pair(cb.slhst, alice.enc, bob.enc)
    t = cb.slhst
    rounds = default_rounds(t.n_points) if samples is None else int(samples)
    if t.inner.size == 0:
        # a single point: both sides know D = 0 without talking
        return ProtocolResult(0.0, 0, 0, rounds, 0)
    ch = Channel()
    diff = _RemoteDiff(alice, bob, ch)
    tree = BinarySamplingTree(t.inner.size)
    total = 0.0
    for r in range(rounds):
        diff.asked = 0
        out = b_import_sample(diff, tree, round_rng(seed, r))
        # one bit per level tells Alice which child to expand, or to stop
        for _ in range(max(1, diff.asked // 2)):
            ch.send_bit("b->a", True)
        if out.is_zero:
            total = None
            break
        v = int(t.inner[out.index])
        a_hat = ch.send_array("a->b", alice.raw(out.index))
        total += eemd(t.sibling[v], int(t.delta[v]), a_hat, bob.raw(out.index)) / out.prob
    d = ch.send_float("b->a", 0.0 if total is None else total / rounds)
    res = ProtocolResult(
        d, math.ceil(ch.bits["a->b"] / 8), math.ceil(ch.bits["b->a"] / 8), rounds, protocol_bound(cb, rounds)
    )
    assert res.bytes_total <= res.bound, (res.bytes_total, res.bound)
    return res


def _median(xs) -> float:
    """Lower median, matching the sketch estimator."""
    a = sorted(xs)
    return float(a[(len(a) - 1) // 2])


def oracle_replicas(s: int, c3: float = 2.0) -> int:
    return max(1, math.ceil(c3 * math.log2(max(s, 2))))


@dataclass(eq=False)
class OracleStore:
    containers: list
    encodings: list
    seed: int = 0

    @property
    def r(self) -> int:
        return len(self.containers)

    @property
    def s(self) -> int:
        return len(self.encodings[0]) if self.encodings else 0

    @classmethod
    def build(cls, m: FiniteMetric, dists, eps: float = 1 / 3, seed: int = 0, k: int = 256, c3: float = 2.0, c2: float = 2.0):
        dists = list(dists)
        if not dists:
            raise ValueError("oracle needs at least one distribution")
        r = oracle_replicas(len(dists), c3)
        cs, encs = [], []
        for j in range(r):
            c = preprocess(m, eps=eps, mode="avg", seed=derive_seed(seed, 100 + j), k=k, c2=c2)
            cs.append(c)
            encs.append([encode(c, mu) for mu in dists])
        return cls(cs, encs, seed)

    def query(self, i: int, j: int, samples=None, seed: int | None = None) -> float:
        for x in (i, j):
            if not 0 <= x < self.s:
                raise IndexError(f"distribution index {x} out of range 0..{self.s - 1}")
        seed = self.seed if seed is None else seed
        ests = [
            estimate(c, e[i], e[j], samples=samples, seed=derive_seed(seed, 200 + q))
            for q, (c, e) in enumerate(zip(self.containers, self.encodings))
        ]
        return _median(ests)

    def sizes(self) -> dict:
        cont = [len(c.to_bytes()) for c in self.containers]
        enc = [sum(len(e.to_bytes()) for e in es) for es in self.encodings]
        return {"r": self.r, "s": self.s, "container_bytes": cont, "encoding_bytes": enc, "total_bytes": sum(cont) + sum(enc)}

    def to_bytes(self) -> bytes:
        arrays = {}
        for q, (c, es) in enumerate(zip(self.containers, self.encodings)):
            arrays[f"c{q:04d}"] = np.frombuffer(c.to_bytes(), dtype=np.uint8)
            for i, e in enumerate(es):
                arrays[f"e{q:04d}.{i:06d}"] = np.frombuffer(e.to_bytes(), dtype=np.uint8)
        return pack_arrays(ORACLE_MAGIC, {"r": self.r, "s": self.s, "seed": self.seed}, arrays)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "OracleStore":
        meta, arrays = unpack_arrays(ORACLE_MAGIC, buf)
        r, s = int(meta["r"]), int(meta["s"])
        cs = [PreprocessContainer.from_bytes(arrays[f"c{q:04d}"].tobytes()) for q in range(r)]
        es = [[Encoding.from_bytes(arrays[f"e{q:04d}.{i:06d}"].tobytes()) for i in range(s)] for q in range(r)]
        return cls(cs, es, int(meta["seed"]))


BENCH_KEYS = {"families", "n", "eps", "k", "pairs", "seed", "samples", "threads"}
BENCH_COLUMNS = [
    "family", "n", "eps", "k", "pair", "emd_exact", "emd_tree", "d_linear", "d_sketch",
    "ratio_tree", "ratio_linear", "ratio_sketch", "t_preprocess", "t_linear", "t_sketch",
    "container_bytes", "encoding_bytes",
]


def check_bench_config(cfg) -> dict:
    if not isinstance(cfg, dict):
        raise ValueError("bench config must be a JSON object")
    extra = set(cfg) - BENCH_KEYS
    if extra:
        raise ValueError(f"unknown bench config keys: {sorted(extra)}")
    out = {
        "families": list(cfg.get("families", [])),
        "n": [int(x) for x in cfg.get("n", [])],
        "eps": [float(x) for x in cfg.get("eps", [1 / 3])],
        "k": [int(x) for x in cfg.get("k", [256])],
        "pairs": int(cfg.get("pairs", 3)),
        "seed": int(cfg.get("seed", 0)),
        "samples": cfg.get("samples"),
        "threads": cfg.get("threads"),
    }
    if any(not isinstance(f, str) for f in out["families"]):
        raise ValueError("families must be names")
    if any(n < 1 for n in out["n"]) or any(k < 1 for k in out["k"]) or out["pairs"] < 0:
        raise ValueError("n, k must be positive and pairs nonnegative")
    if any(not 0 < e <= 1 / 3 + 1e-12 for e in out["eps"]):
        raise ValueError("eps must lie in (0, 1/3]")
    return out


def bench(cfg: dict) -> list:
    """One row per (family, n, eps, k, pair)."""
    cfg = check_bench_config(cfg)
    rows = []
    for fam in cfg["families"]:
        for n in cfg["n"]:
            m = make_metric(fam, n, cfg["seed"])
            den = default_denominator(n)
            rng = np.random.default_rng(np.random.SeedSequence([cfg["seed"], n, 11]))
            pairs = [(Distribution.random(n, den, rng), Distribution.random(n, den, rng)) for _ in range(cfg["pairs"])]
            exact = [emd_exact(m, a, b)[0] for a, b in pairs]
            for eps in cfg["eps"]:
                for k in cfg["k"]:
                    t0 = time.perf_counter()
                    c = preprocess(m, eps=eps, seed=cfg["seed"], k=k, threads=cfg["threads"])
                    tp = time.perf_counter() - t0
                    cbytes = len(c.to_bytes())
                    for p, ((a, b), ex) in enumerate(zip(pairs, exact)):
                        et = emd_slhst(c.slhst, a, b)
                        t0 = time.perf_counter()
                        dl = query(c, a, b, samples=cfg["samples"], seed=cfg["seed"] + p)["D"]
                        tl = time.perf_counter() - t0
                        t0 = time.perf_counter()
                        ea, eb = encode(c, a), encode(c, b)
                        ds = estimate(c, ea, eb, samples=cfg["samples"], seed=cfg["seed"] + p)
                        ts = time.perf_counter() - t0
                        rows.append({
                            "family": fam, "n": n, "eps": eps, "k": k, "pair": p,
                            "emd_exact": ex, "emd_tree": et, "d_linear": dl, "d_sketch": ds,
                            "ratio_tree": et / ex if ex else float("nan"),
                            "ratio_linear": dl / ex if ex else float("nan"),
                            "ratio_sketch": ds / ex if ex else float("nan"),
                            "t_preprocess": tp, "t_linear": tl, "t_sketch": ts,
                            "container_bytes": cbytes, "encoding_bytes": len(ea.to_bytes()),
                        })
    return rows


def bench_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def bench_dat(rows) -> str:
    """Whitespace-separated columns for gnuplot; family goes in as a quoted string."""
    lines = ["# " + " ".join(BENCH_COLUMNS)]
    for r in rows:
        lines.append(" ".join(f'"{r[c]}"' if c == "family" else repr(r[c]) for c in BENCH_COLUMNS))
    return "\n".join(lines) + "\n"


def write_bench(rows, outdir) -> tuple[Path, Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    p_csv, p_dat = outdir / "bench.csv", outdir / "bench.dat"
    p_csv.write_text(bench_csv(rows))
    p_dat.write_text(bench_dat(rows))
    return p_csv, p_dat


def dump_exact(m: FiniteMetric, mu: Distribution, nu: Distribution) -> dict:
    cost, plan = emd_exact(m, mu, nu)
    i, j = np.nonzero(plan.flow)
    return {
        "emd": cost,
        "emd_units": cost / mu.denominator,
        "denominator": mu.denominator,
        "plan": [[int(a), int(b), int(plan.flow[a, b])] for a, b in zip(i, j)],
    }


def load_bench_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"bench config is not valid JSON: {e}") from e
