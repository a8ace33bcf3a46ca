"""Command line front end.  Exit codes: 0 ok, 2 validation, 3 format mismatch."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import __version__, pipeline
from .encoding import Encoding, EncodingMismatch
from .formats import FormatError, read_distribution
from .metric import MetricError, load_metric

EXIT_OK, EXIT_VALIDATION, EXIT_FORMAT = 0, 2, 3


def _emit(obj: dict, fmt: str) -> None:
    if fmt == "csv":
        buf = io.StringIO()
        flat = {k: v for k, v in obj.items() if not isinstance(v, (list, dict))}
        w = csv.DictWriter(buf, fieldnames=list(flat), lineterminator="\n")
        w.writeheader()
        w.writerow(flat)
        sys.stdout.write(buf.getvalue())
    else:
        sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _load_encoding(path) -> Encoding:
    return Encoding.from_bytes(Path(path).read_bytes())


def cmd_preprocess(a) -> None:
    m = load_metric(a.metric, scale=a.scale, alpha=a.alpha)
    c = pipeline.preprocess(m, eps=a.eps, mode=a.mode, seed=a.seed, k=a.k, c1=a.c1, c2=a.c2)
    size = c.save(a.out)
    _emit(pipeline.report(c, size), a.format)


def cmd_query(a) -> None:
    c = pipeline.PreprocessContainer.load(a.container)
    res = pipeline.query(c, read_distribution(a.mu), read_distribution(a.nu), samples=a.samples, seed=a.seed)
    _emit(res, a.format)


def cmd_encode(a) -> None:
    c = pipeline.PreprocessContainer.load(a.container)
    enc = pipeline.encode(c, read_distribution(a.mu))
    buf = enc.to_bytes()
    Path(a.out).write_bytes(buf)
    _emit({"bytes": len(buf), "blocks": int(enc.blocks.shape[0]), "k": enc.k, "raw": int(enc.raw.size), "sha256": enc.digest()}, a.format)


def cmd_estimate(a) -> None:
    c = pipeline.PreprocessContainer.load(a.container)
    d = pipeline.estimate(c, _load_encoding(a.enc1), _load_encoding(a.enc2), samples=a.samples, seed=a.seed)
    _emit({"D": d}, a.format)


def cmd_protocol(a) -> None:
    ca = pipeline.PreprocessContainer.load(a.container)
    cb = pipeline.PreprocessContainer.load(a.container_b) if a.container_b else ca
    res = pipeline.simulate_protocol(ca, read_distribution(a.mu), read_distribution(a.nu), cb=cb, samples=a.samples, seed=a.seed)
    _emit(
        {
            "D": res.D,
            "bytes_a_to_b": res.bytes_a_to_b,
            "bytes_b_to_a": res.bytes_b_to_a,
            "bytes_total": res.bytes_total,
            "bound": res.bound,
            "rounds": res.rounds,
        },
        a.format,
    )


def cmd_oracle_build(a) -> None:
    m = load_metric(a.metric, scale=a.scale, alpha=a.alpha)
    dists = [read_distribution(p) for p in a.dists]
    store = pipeline.OracleStore.build(m, dists, eps=a.eps, seed=a.seed, k=a.k, c3=a.c3)
    Path(a.out).write_bytes(store.to_bytes())
    _emit(store.sizes(), a.format)


def cmd_oracle_query(a) -> None:
    store = pipeline.OracleStore.from_bytes(Path(a.store).read_bytes())
    try:
        d = store.query(a.i, a.j, samples=a.samples, seed=a.seed)
    except IndexError as e:
        raise ValueError(str(e)) from e
    _emit({"D": d, "i": a.i, "j": a.j, "r": store.r}, a.format)


def cmd_bench(a) -> None:
    rows = pipeline.bench(pipeline.load_bench_config(a.config))
    p_csv, p_dat = pipeline.write_bench(rows, a.out)
    _emit({"rows": len(rows), "csv": str(p_csv), "dat": str(p_dat)}, a.format)


def cmd_dump_exact(a) -> None:
    m = load_metric(a.metric, scale=a.scale)
    res = pipeline.dump_exact(m, read_distribution(a.mu), read_distribution(a.nu))
    if a.format == "csv":
        sys.stdout.write(f"# emd={res['emd']} denominator={res['denominator']}\nsource,target,mass\n")
        for i, j, f in res["plan"]:
            sys.stdout.write(f"{i},{j},{f}\n")
    else:
        _emit(res, a.format)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emdx", description="EMD estimation over finite metrics.")
    p.add_argument("--version", action="version", version=f"emdx {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--format", choices=("csv", "json", "bin"), default="json")

    build = argparse.ArgumentParser(add_help=False)
    build.add_argument("--eps", type=float, default=1 / 3)
    build.add_argument("--k", type=int, default=256, help="sketch rows")
    build.add_argument("--scale", type=float, default=1.0, help="multiply distances before rounding")
    build.add_argument("--alpha", type=float, default=None, help="doubling dimension; estimated if omitted")

    est = argparse.ArgumentParser(add_help=False)
    est.add_argument("--samples", "-M", type=int, default=None, help="estimator rounds")

    s = sub.add_parser("preprocess", parents=[common, build], help="build a preprocessing container")
    s.add_argument("metric")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--mode", choices=pipeline.MODE_CHOICES, default="both")
    s.add_argument("--c1", type=float, default=4.0)
    s.add_argument("--c2", type=float, default=2.0)
    s.set_defaults(fn=cmd_preprocess)

    s = sub.add_parser("query", parents=[common, est], help="near-linear estimate from raw distributions")
    s.add_argument("container")
    s.add_argument("mu")
    s.add_argument("nu")
    s.set_defaults(fn=cmd_query)

    s = sub.add_parser("encode", parents=[common], help="encode one distribution")
    s.add_argument("container")
    s.add_argument("mu")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(fn=cmd_encode)

    s = sub.add_parser("estimate", parents=[common, est], help="sublinear estimate from two encodings")
    s.add_argument("container")
    s.add_argument("enc1")
    s.add_argument("enc2")
    s.set_defaults(fn=cmd_estimate)

    s = sub.add_parser("protocol", parents=[common, est], help="simulate the two-party protocol")
    s.add_argument("container")
    s.add_argument("mu")
    s.add_argument("nu")
    s.add_argument("--container-b", default=None, help="Bob's copy of the container")
    s.set_defaults(fn=cmd_protocol)

    s = sub.add_parser("oracle-build", parents=[common, build], help="store encodings of s distributions")
    s.add_argument("metric")
    s.add_argument("dists", nargs="+")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--c3", type=float, default=2.0)
    s.set_defaults(fn=cmd_oracle_build)

    s = sub.add_parser("oracle-query", parents=[common, est], help="query a stored pair")
    s.add_argument("store")
    s.add_argument("i", type=int)
    s.add_argument("j", type=int)
    s.set_defaults(fn=cmd_oracle_query)

    s = sub.add_parser("bench", parents=[common], help="run a benchmark sweep")
    s.add_argument("config")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(fn=cmd_bench)

    s = sub.add_parser("dump-exact", parents=[common], help="exact EMD and an optimal plan")
    s.add_argument("metric")
    s.add_argument("mu")
    s.add_argument("nu")
    s.add_argument("--scale", type=float, default=1.0)
    s.set_defaults(fn=cmd_dump_exact)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (FormatError, EncodingMismatch) as e:
        print(f"emdx: format mismatch: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except (MetricError, ValueError, OSError) as e:
        print(f"emdx: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
