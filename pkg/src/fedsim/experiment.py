"""Sweeps, policy comparisons, time-to-accuracy and file outputs."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import config as config_mod
from .config import RunConfig
from .engine import METRICS_COLUMNS, WEIGHT_COLUMNS, MetricsLog, run
from .errors import ConfigError, FedSimError

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("point", "params", "seeds", "median_time_to_target_s", "censored",
                 "times_s")


def time_to_accuracy(log_: MetricsLog, target: float) -> float | None:
    """Virtual time of the first checkpoint at or above ``target``."""
    if not 0.0 < target < 1.0:
        raise ConfigError("target must lie in (0, 1)")
    for cp in log_.checkpoints:
        if cp.test_accuracy >= target:
            return cp.virtual_time
    return None


def censored_time(log_: MetricsLog, cfg: RunConfig) -> tuple[float, bool]:
    """Time to target, or ``(max_virtual_time, True)`` when never reached."""
    t = time_to_accuracy(log_, cfg.target_accuracy)
    if t is None:
        return cfg.max_virtual_time, True
    return t, False


@dataclass
class SweepPoint:
    params: dict[str, Any]
    seeds: list[int]
    times: list[float]
    censored: list[bool]

    @property
    def median_time(self) -> float:
        return statistics.median(self.times)

    @property
    def n_censored(self) -> int:
        return sum(self.censored)


@dataclass
class SweepTable:
    base: RunConfig
    points: list[SweepPoint] = field(default_factory=list)

    def median_times(self) -> list[float]:
        return [p.median_time for p in self.points]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for i, p in enumerate(self.points):
            writer.writerow((i, json.dumps(p.params, sort_keys=True),
                             " ".join(map(str, p.seeds)), repr(p.median_time), p.n_censored,
                             " ".join(repr(t) for t in p.times)))
        return buf.getvalue()


def expand_grid(axis: Mapping[str, Sequence[Any]]) -> list[dict[str, Any]]:
    """Cartesian product of the axis values, in the order given."""
    if not axis or any(len(v) == 0 for v in axis.values()):
        raise ConfigError("sweep grid must be non-empty")
    keys = list(axis)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(axis[k] for k in keys))]


def apply_params(base: RunConfig, params: Mapping[str, Any]) -> RunConfig:
    cfg = base
    for key, value in params.items():
        cfg = config_mod.set_param(cfg, key, value)
    return cfg


def _single(cfg: RunConfig) -> tuple[float, bool]:
    return censored_time(run(cfg), cfg)


def run_sweep(base: RunConfig, axis: Mapping[str, Sequence[Any]], seeds: Sequence[int],
              jobs: int = 1) -> SweepTable:
    """Run every grid point with every seed; median time-to-target per point.

    Seeds are sorted first, so the table does not depend on seed order.
    Child config errors abort the sweep with the offending point named.
    """
    if not seeds:
        raise ConfigError("at least one seed is required")
    seeds = sorted(set(int(s) for s in seeds))
    grid = expand_grid(axis)
    cfgs = []
    for params in grid:
        try:
            point_cfg = apply_params(base, params)
            cfgs.append([replace(point_cfg, seed=s) for s in seeds])
        except FedSimError as exc:
            raise ConfigError(f"sweep point {params}: {exc}") from exc
    flat = [c for row in cfgs for c in row]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_single, flat))
    else:
        results = [_single(c) for c in flat]
    table = SweepTable(base)
    it = iter(results)
    for params in grid:
        row = [next(it) for _ in seeds]
        table.points.append(SweepPoint(dict(params), list(seeds), [t for t, _ in row],
                                       [c for _, c in row]))
        log.info("sweep %s: median %.1fs (%d censored)", params,
                 table.points[-1].median_time, table.points[-1].n_censored)
    return table


def compare_policies(base: RunConfig, policies: Sequence[str]) -> dict[str, MetricsLog]:
    out = {}
    for name in policies:
        cfg = replace(base, aggregator=replace(base.aggregator, kind=name))
        out[name] = run(cfg)
    return out


def summary(cfg: RunConfig, logs: Mapping[str, MetricsLog]) -> dict[str, Any]:
    return {
        "config": config_mod.to_dict(cfg),
        "seed": cfg.seed,
        "target_accuracy": cfg.target_accuracy,
        "time_to_target": {name: time_to_accuracy(lg, cfg.target_accuracy)
                           for name, lg in logs.items()},
        "runs": {
            name: {
                "rounds": lg.aggregations, "dispatches": lg.dispatches, "uploads": lg.uploads,
                "partial_uploads": lg.partial_uploads, "deferrals": lg.deferrals,
                "notifications": lg.notifications,
                "max_aggregated_staleness": lg.max_aggregated_staleness,
                "end_time_s": lg.end_time,
                "final_accuracy": lg.checkpoints[-1].test_accuracy if lg.checkpoints else None,
            }
            for name, lg in logs.items()
        },
    }


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from exc


def emit_outputs(result: MetricsLog | Mapping[str, MetricsLog] | SweepTable, out_dir,
                 cfg: RunConfig | None = None) -> list[Path]:
    """Write CSV/JSON artefacts for a run, a policy comparison, or a sweep.

    Runs produce ``metrics.csv``, ``curves.csv``, ``weights.csv`` and (with
    ``cfg``) ``summary.json``. Sweeps produce ``sweep.csv`` and
    ``summary.json``.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create {out}: {exc.strerror}") from exc
    written = []
    if isinstance(result, SweepTable):
        _write(out / "sweep.csv", result.to_csv())
        doc = {"config": config_mod.to_dict(result.base),
               "points": [{"params": p.params, "seeds": p.seeds, "times_s": p.times,
                           "censored": p.censored, "median_time_to_target_s": p.median_time}
                          for p in result.points]}
        _write(out / "summary.json", json.dumps(doc, indent=2, sort_keys=True))
        return [out / "sweep.csv", out / "summary.json"]

    logs = {result.policy: result} if isinstance(result, MetricsLog) else dict(result)
    metrics = ",".join(METRICS_COLUMNS) + "\n" + "".join(
        lg.to_csv(header=False) for lg in logs.values())
    _write(out / "metrics.csv", metrics)
    curves = ["policy,virtual_time_s,test_accuracy"]
    for name, lg in logs.items():
        curves += [f"{name},{cp.virtual_time!r},{cp.test_accuracy!r}" for cp in lg.checkpoints]
    _write(out / "curves.csv", "\n".join(curves) + "\n")
    weights = ",".join(WEIGHT_COLUMNS) + "\n" + "".join(
        lg.weights_csv(header=False) for lg in logs.values())
    _write(out / "weights.csv", weights)
    written += [out / "metrics.csv", out / "curves.csv", out / "weights.csv"]
    if cfg is not None:
        _write(out / "summary.json", json.dumps(summary(cfg, logs), indent=2, sort_keys=True))
        written.append(out / "summary.json")
    return written


def load_summary_config(path) -> RunConfig:
    """Recover the echoed config from a ``summary.json``."""
    doc = json.loads(Path(path).read_text())
    return config_mod.from_dict(doc["config"])
