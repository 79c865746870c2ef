"""Command line entry points.

Subcommands:

* ``run``       -- execute an experiment spec, write CSV/JSON traces
* ``verify``    -- run the acceptance battery, print one line per check
* ``constants`` -- print the constants report for a spec's problem
* ``solve``     -- print the exact solution summary for a quadratic spec

Settings come from a flat ``key = value`` config file, overlaid by
``L2GDV_<KEY>`` environment variables, overlaid by ``--set key=value``
flags (highest precedence).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .harness import (
    ExperimentSpec,
    apply_env_overrides,
    build_problem,
    emit_csv,
    emit_json,
    load_config,
    run_experiment,
)
from .theory import constants_report, solve_exact


def _collect_overrides(args) -> dict:
    overrides: dict[str, str] = {}
    for item in args.set or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if getattr(args, "alpha1", None) is not None:
        overrides["alpha1"] = args.alpha1
    if getattr(args, "theta", None) is not None:
        overrides["theta"] = str(args.theta)
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = str(args.seed)
    if getattr(args, "out", None):
        overrides["out"] = args.out
    return overrides


def _spec_from_args(args) -> ExperimentSpec:
    overrides = _collect_overrides(args)
    if args.config:
        return load_config(args.config, overrides=overrides)
    return ExperimentSpec.from_dict(apply_env_overrides(overrides))


def _cmd_run(args) -> int:
    spec = _spec_from_args(args)
    agg = run_experiment(spec, jobs=args.jobs)
    out = Path(spec.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    emit_csv(agg, out / "trace.csv")
    emit_json(agg, out / "trace.json")
    last = agg.ks.size - 1
    print(f"wrote {out / 'trace.csv'} and {out / 'trace.json'}")
    print(f"seeds: {agg.n_seeds}; final k = {int(agg.ks[last])}")
    for name, col in (
        ("mean sq dist", agg.mean_sq_dist),
        ("mean F gap", agg.mean_F_gap),
        ("train loss", agg.mean_train_loss),
        ("test acc", agg.test_acc_mean),
    ):
        if not np.isnan(col[last]):
            print(f"  final {name}: {col[last]:.6g}")
    return 0


def _cmd_verify(args) -> int:
    from .acceptance import run_all

    only = [int(t) for t in args.only.split(",")] if args.only else None
    results = run_all(only=only)
    for res in results:
        print(res.line())
    report = {
        "all_passed": all(r.passed for r in results),
        "criteria": [r.to_dict() for r in results],
    }
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        print(f"report written to {args.out}")
    return 0 if report["all_passed"] else 1


def _cmd_constants(args) -> int:
    spec = _spec_from_args(args)
    problem, *_ = build_problem(spec)
    print(constants_report(problem, spec.p).to_json())
    return 0


def _cmd_solve(args) -> int:
    spec = _spec_from_args(args)
    problem, *_ = build_problem(spec)
    sol = solve_exact(problem)
    payload = {
        "F_star": sol.F_star,
        "residual_norm": sol.residual_norm,
        "x_star_norm": sol.x_star.norm(),
        "x_bar": sol.x_star.parts.mean(axis=0).tolist(),
        "x_star": sol.x_star.parts.tolist(),
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
        print(f"solution written to {args.out}")
    else:
        print(text)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="l2gdv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, with_jobs=False):
        sp.add_argument("--config", help="flat key=value spec file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
        sp.add_argument("--alpha1", help="initial step size (or 'auto' for the cap)")
        sp.add_argument("--theta", type=float, help="step decay exponent in [0, 1]")
        sp.add_argument("--seed", type=int, help="shortcut for --set seeds=<seed>")
        sp.add_argument("--out", help="output directory/file override")
        if with_jobs:
            sp.add_argument("--jobs", type=int, default=1,
                            help="parallel seed workers for baseline runs")

    sp_run = sub.add_parser("run", help="run an experiment and write traces")
    common(sp_run, with_jobs=True)
    sp_run.set_defaults(fn=_cmd_run)

    sp_verify = sub.add_parser("verify", help="run the acceptance battery")
    sp_verify.add_argument("--only", help="comma-separated criterion ids")
    sp_verify.add_argument("--out", help="write the JSON report here")
    sp_verify.set_defaults(fn=_cmd_verify)

    sp_const = sub.add_parser("constants", help="print the constants report")
    common(sp_const)
    sp_const.set_defaults(fn=_cmd_constants)

    sp_solve = sub.add_parser("solve", help="print the exact solution summary")
    common(sp_solve)
    sp_solve.set_defaults(fn=_cmd_solve)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
