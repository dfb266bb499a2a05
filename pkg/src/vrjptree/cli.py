"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 numerical failure, 4 some
replicas failed (the record is still written).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .exceptions import NumericalError, UsageError
from .gw_env import OffspringLaw
from .halfline import HalflineEnv, expected_exit_time, green_function, hit_prob
from .lab import (PLOT_COLUMNS, ExperimentSpec, ResultRecord, classify, emit_plotdata, json_safe,
                  fixture_names, load_fixture, run_experiment, worker_count)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4


def parse_law(text: str) -> tuple:
    """``"0,0.2,0.8"`` (q_0, q_1, ...) or ``"1:0.9,5:0.1"`` (k: q_k)."""
    try:
        if ":" in text:
            masses = {int(k): float(p) for k, p in (item.split(":") for item in text.split(","))}
            return OffspringLaw.from_dict(masses).probabilities
        return OffspringLaw(tuple(float(x) for x in text.split(","))).probabilities
    except ValueError as exc:
        raise UsageError(f"bad offspring law {text!r}: {exc}") from exc


def parse_grid(text: str) -> tuple:
    """``"a:b:n"`` for n evenly spaced points, or a comma-separated list."""
    try:
        if text.count(":") == 2:
            a, b, n = text.split(":")
            return tuple(float(x) for x in np.linspace(float(a), float(b), int(n)))
        return tuple(float(x) for x in text.split(",") if x)
    except ValueError as exc:
        raise UsageError(f"bad grid {text!r}") from exc


def _common(p):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--output-dir", default=None, help="results directory (record keyed by spec hash)")
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: $VRJPTREE_WORKERS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vrjptree", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="predicted regime for an offspring law and c")
    p.add_argument("--law", required=True)
    p.add_argument("--c", type=float, required=True)

    p = sub.add_parser("simulate", help="run an experiment spec")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--spec", help="path to a JSON spec")
    src.add_argument("--fixture", help="name of a shipped spec")
    p.add_argument("--kind", choices=["rwre-speed", "exponent"], default="rwre-speed")
    p.add_argument("--law", default="0,0,1")
    p.add_argument("--c", type=float, default=1.0)
    _common(p)

    p = sub.add_parser("equivalence", help="mixture equivalence test on a fixed tree")
    p.add_argument("--tree", default="path4")
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--skeleton", type=int, default=4)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--corrupt", action="store_true", help="negative control with A = 1")
    _common(p)

    p = sub.add_parser("oracle", help="half-line exact values or oracle sweep")
    p.add_argument("--env-file", help="whitespace-separated A_0 .. A_n")
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--sites", type=int, default=50)
    _common(p)

    p = sub.add_parser("scan", help="phase-diagram scan over c (and q1)")
    p.add_argument("--law", default="0,0,1")
    p.add_argument("--c-grid", required=True)
    p.add_argument("--q1-grid", default="")
    _common(p)

    p = sub.add_parser("plotdata", help="write a plot table from a saved record")
    p.add_argument("--record", required=True)
    p.add_argument("--kind", required=True, choices=sorted(PLOT_COLUMNS))
    p.add_argument("--out", required=True)

    sub.add_parser("fixtures", help="list shipped experiment specs")
    return parser


def _overrides(args) -> dict:
    out = {}
    for name in ("seed", "replicas", "steps", "horizon"):
        value = getattr(args, name)
        if value is not None:
            out[name] = value
    if args.output_dir is not None:
        out["output"] = args.output_dir
    return out


def _spec_from_args(args) -> ExperimentSpec:
    cmd = args.command
    base = _overrides(args)
    if cmd == "simulate":
        if args.spec or args.fixture:
            spec = ExperimentSpec.load(args.spec) if args.spec else load_fixture(args.fixture)
            return spec.replace(**base)
        return ExperimentSpec(kind=args.kind, law=parse_law(args.law), c=args.c, **base)
    if cmd == "equivalence":
        base.setdefault("replicas", 1)
        return ExperimentSpec(kind="vrjp-equivalence", tree=args.tree, c=args.c,
                              skeleton=args.skeleton, samples=args.samples,
                              corrupt=args.corrupt, **base)
    if cmd == "oracle":
        base.setdefault("replicas", 100)
        return ExperimentSpec(kind="halfline-oracle", c=args.c, sites=args.sites, **base)
    return ExperimentSpec(kind="phase-scan", law=parse_law(args.law),
                          c_grid=parse_grid(args.c_grid), q1_grid=parse_grid(args.q1_grid),
                          **base)


def _print(obj):
    print(json.dumps(json_safe(obj), sort_keys=True, indent=2, allow_nan=False))


def _oracle_env(path):
    env = HalflineEnv.from_file(path)
    n = env.n
    rows = [{"site": i, "hit": hit_prob(env, i, n), "green": green_function(env, i, -1, n),
             "exit_time": expected_exit_time(env, i, -1, n)} for i in range(n)]
    _print({"n": n, "potential": env.potential.tolist(), "sites": rows})


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "fixtures":
        print("\n".join(fixture_names()))
        return EXIT_OK
    if args.command == "classify":
        _print(classify(OffspringLaw(parse_law(args.law)), args.c).to_dict())
        return EXIT_OK
    if args.command == "plotdata":
        path = emit_plotdata(ResultRecord.load(args.record), args.kind, args.out)
        print(path)
        return EXIT_OK
    if args.command == "oracle" and args.env_file:
        _oracle_env(args.env_file)
        return EXIT_OK
    spec = _spec_from_args(args)
    workers = args.workers if args.workers is not None else worker_count()
    record = run_experiment(spec, workers=workers)
    _print({"spec_hash": record.spec_hash, "aggregates": record.payload()["aggregates"],
            "classification": record.payload()["classification"],
            "errors": record.errors})
    return EXIT_PARTIAL if record.failed else EXIT_OK


def main(argv=None):
    try:
        code = run(argv)
    except (UsageError, ValueError, FileNotFoundError) as exc:
        print(f"vrjptree: error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except (NumericalError, FloatingPointError, ArithmeticError) as exc:
        print(f"vrjptree: numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    sys.exit(code)


if __name__ == "__main__":
    main()
