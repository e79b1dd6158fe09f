"""Command line entry point: ``fedsim simulate|sweep|compare``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from . import config as config_mod
from .aggregator import POLICIES
from .engine import run
from .errors import FedSimError
from .experiment import compare_policies, emit_outputs, run_sweep, time_to_accuracy

LOG_ENV = "FEDSIM_LOG_LEVEL"


def _csv_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one simulation")
    sim.add_argument("--config", required=True)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out", default="out")
    sim.add_argument("--workers", type=int, default=1, help="local-training thread pool size")

    sweep = sub.add_parser("sweep", help="grid x seeds, median time to target")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--param", action="append", required=True,
                       help="config key to vary; repeat with --values for a grid")
    sweep.add_argument("--values", action="append", required=True, type=_csv_list)
    sweep.add_argument("--seeds", required=True, type=_csv_list)
    sweep.add_argument("--out", default="out")
    sweep.add_argument("--jobs", type=int, default=1, help="parallel runs")

    cmp_ = sub.add_parser("compare", help="run several policies on one scenario")
    cmp_.add_argument("--config", required=True)
    cmp_.add_argument("--policies", type=_csv_list, default=list(POLICIES))
    cmp_.add_argument("--seed", type=int)
    cmp_.add_argument("--out", default="out")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = config_mod.load(args.config)
        if getattr(args, "seed", None) is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.command == "simulate":
            result = run(cfg, workers=args.workers)
            emit_outputs(result, args.out, cfg)
            t = time_to_accuracy(result, cfg.target_accuracy)
            print(f"{cfg.policy}: {result.aggregations} rounds, time to "
                  f"{cfg.target_accuracy:g} = {'not reached' if t is None else f'{t:.1f}s'}")
        elif args.command == "sweep":
            if len(args.param) != len(args.values):
                raise FedSimError("give one --values list per --param")
            axis = dict(zip(args.param, args.values))
            table = run_sweep(cfg, axis, [int(s) for s in args.seeds], jobs=args.jobs)
            emit_outputs(table, args.out)
            for p in table.points:
                print(f"{p.params}: median {p.median_time:.1f}s ({p.n_censored} censored)")
        else:
            for name in args.policies:
                if name not in POLICIES:
                    raise FedSimError(f"unknown policy {name!r}")
            logs = compare_policies(cfg, args.policies)
            emit_outputs(logs, args.out, cfg)
            for name, lg in logs.items():
                t = time_to_accuracy(lg, cfg.target_accuracy)
                print(f"{name}: {'not reached' if t is None else f'{t:.1f}s'}")
    except (FedSimError, OSError, ValueError) as exc:
        print(f"fedsim: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
