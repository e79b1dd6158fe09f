import csv
import json

import pytest

from fedsim.aggregator import AggregationPolicy
from fedsim.config import DataConfig, RunConfig, TrainSettings
from fedsim.device import SpeedModel
from fedsim.engine import METRICS_COLUMNS, Checkpoint, MetricsLog, run
from fedsim.errors import ConfigError
from fedsim.experiment import (censored_time, compare_policies, emit_outputs, expand_grid,
                               load_summary_config, run_sweep, time_to_accuracy)


def fake_log(points, policy="seafl"):
    return MetricsLog(policy, [Checkpoint(i, t, 1.0, a) for i, (t, a) in enumerate(points)])


CURVE = [(0.0, 0.1), (120.0, 0.5), (240.0, 0.85), (357.0, 0.91), (400.0, 0.89), (500.0, 0.95)]


def test_time_to_accuracy_examples():
    log = fake_log(CURVE)
    assert time_to_accuracy(log, 0.9) == 357.0
    assert time_to_accuracy(log, 0.99) is None
    assert time_to_accuracy(log, 0.05) == 0.0
    assert time_to_accuracy(fake_log([]), 0.5) is None
    with pytest.raises(ConfigError):
        time_to_accuracy(log, 1.0)


def test_time_to_accuracy_is_monotone_in_target():
    log = fake_log(CURVE)
    targets = [i / 100 for i in range(1, 100)]
    times = [time_to_accuracy(log, t) for t in targets]
    reached = [t for t in times if t is not None]
    assert reached == sorted(reached)
    # once unreachable, higher targets stay unreachable
    first_none = times.index(None)
    assert all(t is None for t in times[first_none:])


def small(**kw):
    base = dict(
        target_accuracy=0.8, seed=0, num_clients=10, max_virtual_time=150.0,
        aggregator=AggregationPolicy(kind="fedbuff", buffer_size=2),
        train=TrainSettings(epochs=2, learning_rate=0.1, batch_size=16),
        data=DataConfig(num_classes=3, dim=5, samples=600, concentration=0.5),
        speed=SpeedModel(kind="zipf", zipf_max_delay=20))
    base.update(kw)
    return RunConfig(**base)


def test_censored_time():
    cfg = small(max_virtual_time=500.0)
    assert censored_time(fake_log(CURVE), cfg) == (240.0, False)
    cfg = small(target_accuracy=0.99, max_virtual_time=500.0)
    assert censored_time(fake_log(CURVE), cfg) == (500.0, True)


def test_expand_grid_order():
    assert expand_grid({"a": [1, 2], "b": ["x", "y"]}) == [
        {"a": 1, "b": "x"}, {"a": 1, "b": "y"}, {"a": 2, "b": "x"}, {"a": 2, "b": "y"}]
    with pytest.raises(ConfigError):
        expand_grid({})
    with pytest.raises(ConfigError):
        expand_grid({"a": []})


def test_single_point_sweep_matches_single_run():
    cfg = small()
    table = run_sweep(cfg, {"seed": [0]}, [3])
    expected, censored = censored_time(run(small(seed=3)), cfg)
    assert table.points[0].times == [expected]
    assert table.points[0].censored == [censored]
    assert table.points[0].median_time == expected


def test_sweep_ignores_seed_order():
    cfg = small()
    a = run_sweep(cfg, {"buffer_size": [1, 2]}, [2, 0, 1])
    b = run_sweep(cfg, {"buffer_size": [1, 2]}, [1, 2, 0])
    assert a.to_csv() == b.to_csv()
    assert [p.params for p in a.points] == [{"buffer_size": 1}, {"buffer_size": 2}]


def test_sweep_in_parallel_matches_serial():
    cfg = small()
    a = run_sweep(cfg, {"buffer_size": [1, 2]}, [0, 1])
    b = run_sweep(cfg, {"buffer_size": [1, 2]}, [0, 1], jobs=2)
    assert a.to_csv() == b.to_csv()


def test_bad_sweep_point_names_itself():
    with pytest.raises(ConfigError, match="buffer_size"):
        run_sweep(small(), {"buffer_size": [1, 50]}, [0])
    with pytest.raises(ConfigError):
        run_sweep(small(), {"buffer_size": [1]}, [])


def test_empty_log_gives_header_only_csv(tmp_path):
    emit_outputs(MetricsLog("fedbuff"), tmp_path)
    assert (tmp_path / "metrics.csv").read_text() == ",".join(METRICS_COLUMNS) + "\n"
    assert (tmp_path / "curves.csv").read_text() == "policy,virtual_time_s,test_accuracy\n"


def test_two_policy_curves(tmp_path):
    cfg = small(max_virtual_time=60.0)
    logs = compare_policies(cfg, ["seafl", "fedbuff"])
    emit_outputs(logs, tmp_path, cfg)
    with open(tmp_path / "curves.csv") as fh:
        labels = {row["policy"] for row in csv.DictReader(fh)}
    assert labels == {"seafl", "fedbuff"}
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["policy"] for r in rows} == {"seafl", "fedbuff"}
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert set(summary["time_to_target"]) == {"seafl", "fedbuff"}


def test_summary_round_trip(tmp_path):
    cfg = small(aggregator=AggregationPolicy(kind="seafl", buffer_size=2,
                                             staleness_limit=float("inf")))
    emit_outputs(run(cfg), tmp_path, cfg)
    assert load_summary_config(tmp_path / "summary.json") == cfg


def test_sweep_outputs(tmp_path):
    table = run_sweep(small(), {"buffer_size": [1, 2]}, [0])
    paths = emit_outputs(table, tmp_path)
    assert [p.name for p in paths] == ["sweep.csv", "summary.json"]
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "point,params,seeds,median_time_to_target_s,censored,times_s"
    assert len(lines) == 3
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert len(doc["points"]) == 2


def test_unwritable_output_reports_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit_outputs(MetricsLog("fedbuff"), blocker / "sub")
