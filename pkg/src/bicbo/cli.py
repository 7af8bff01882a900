"""Command-line entry point: ``bicbo {run,replicate,compare,list-problems}``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .harness import ExperimentConfig
from .problems import builtin, builtin_names

_FLAG_FIELDS = {
    "problem": "problem",
    "problem_file": "problem_file",
    "method": "method",
    "initial_size": "initial_size",
    "steps": "steps",
    "reps": "replications",
    "seed": "seed",
    "candidates": "candidates",
    "refit_every": "refit_every",
    "workers": "workers",
}


def _config(args) -> ExperimentConfig:
    base = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    updates = {
        field: getattr(args, flag)
        for flag, field in _FLAG_FIELDS.items()
        if getattr(args, flag, None) is not None
    }
    if getattr(args, "no_timing", False):
        updates["record_timing"] = False
    return replace(base, **updates)


def _add_common(p: argparse.ArgumentParser, method: bool = True):
    p.add_argument("--config", help="JSON file with ExperimentConfig fields; flags override it")
    p.add_argument("--problem", help="built-in problem name")
    p.add_argument("--problem-file", help="polynomial problem JSON file")
    if method:
        p.add_argument("--method", choices=harness.METHODS)
    p.add_argument("--initial-size", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--candidates", type=int, help="acquisition candidate set size")
    p.add_argument("--refit-every", type=int, help="re-estimate kernel rates every N steps")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--no-timing", action="store_true", help="write wall_ms as 0 for byte-stable traces")


def _summary(study) -> str:
    step, mean, lo, hi = study.final
    return f"{study.config.method}: final mean best feasible {mean:.6g} [{lo:.6g}, {hi:.6g}] at step {step}"


def cmd_run(args) -> int:
    cfg = replace(_config(args), replications=1)
    problem = cfg.resolve_problem()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace = harness.run_bo(problem, cfg, 0)
    harness.write_trace_csv([trace], out / "trace.csv", problem.dim)
    rec = trace.recommendation()
    extra = {"recommendation": None if rec is None else {"x": list(rec[0]), "y": rec[1]}}
    harness.write_manifest(harness.manifest([cfg], [trace], extra), out / "manifest.json")
    if rec is None:
        print("no feasible point observed")
    else:
        print(f"best feasible y = {rec[1]:.6g} at x = {list(rec[0])}")
    return 0


def cmd_replicate(args) -> int:
    cfg = _config(args)
    problem = cfg.resolve_problem()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    study = harness.replicate(cfg, problem)
    harness.write_trace_csv(study.traces, out / "trace.csv", problem.dim)
    harness.write_aggregate_csv(study.aggregate, out / "aggregate.csv")
    harness.write_manifest(harness.manifest([cfg], study.traces), out / "manifest.json")
    print(_summary(study))
    return 0


def cmd_compare(args) -> int:
    base = _config(args)
    problem = base.resolve_problem()
    cfg_a = replace(base, method=args.methods[0])
    cfg_b = replace(base, method=args.methods[1])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cmp = harness.compare(cfg_a, cfg_b, problem)
    for study in (cmp.a, cmp.b):
        sub = out / study.config.method
        sub.mkdir(exist_ok=True)
        harness.write_trace_csv(study.traces, sub / "trace.csv", problem.dim)
        harness.write_aggregate_csv(study.aggregate, sub / "aggregate.csv")
    harness.write_compare_csv(cmp.rows, out / "compare.csv")
    extra = {"difference": f"{cfg_a.method} - {cfg_b.method}"}
    if base.record_timing:
        extra["wall_ratio"] = cmp.wall_ratio
    harness.write_manifest(harness.manifest([cfg_a, cfg_b], cmp.a.traces + cmp.b.traces, extra), out / "manifest.json")
    print(_summary(cmp.a))
    print(_summary(cmp.b))
    step, mean, lo, hi = cmp.rows[-1]
    print(f"final difference ({cfg_a.method} - {cfg_b.method}) {mean:.6g} [{lo:.6g}, {hi:.6g}]")
    if base.record_timing:
        print(f"wall-clock ratio {cfg_b.method}/{cfg_a.method}: {cmp.wall_ratio:.3g}")
    return 0


def cmd_list(args) -> int:
    for name in builtin_names():
        p = builtin(name)
        print(f"{name}\td={p.dim}\tc={p.c}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bicbo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="single optimization trace")
    _add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replicate", help="replication study with mean and 95% band")
    _add_common(p)
    p.add_argument("--reps", type=int)
    p.add_argument("--workers", type=int, help="parallel replication processes")
    p.set_defaults(func=cmd_replicate)

    p = sub.add_parser("compare", help="paired two-method study")
    _add_common(p, method=False)
    p.add_argument("--reps", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--methods", nargs=2, default=list(harness.METHODS), choices=harness.METHODS)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("list-problems", help="list built-in problems")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
