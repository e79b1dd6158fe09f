import json
import subprocess
import sys

import pytest

from fedsim.cli import main

CONFIG = """
[run]
target_accuracy = 0.8
seed = 0
num_clients = 10
max_virtual_time = 80

[aggregator]
policy = seafl
buffer_size = 2
staleness_limit = 4

[train]
epochs = 2
learning_rate = 0.1
batch_size = 16

[data]
num_classes = 3
dim = 5
samples = 600
concentration = 0.5

[speed]
kind = zipf
zipf_max_delay = 20
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(CONFIG)
    return path


def test_simulate(config_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(config_file), "--out", str(out), "--seed", "2"]) == 0
    assert {p.name for p in out.iterdir()} == {"metrics.csv", "curves.csv", "weights.csv",
                                              "summary.json"}
    assert json.loads((out / "summary.json").read_text())["seed"] == 2
    assert "seafl" in capsys.readouterr().out


def test_sweep(config_file, tmp_path):
    out = tmp_path / "sw"
    rc = main(["sweep", "--config", str(config_file), "--param", "buffer_size",
               "--values", "1,2", "--seeds", "0,1", "--out", str(out)])
    assert rc == 0
    assert len((out / "sweep.csv").read_text().splitlines()) == 3


def test_compare(config_file, tmp_path):
    out = tmp_path / "cmp"
    rc = main(["compare", "--config", str(config_file), "--policies", "seafl,fedasync",
               "--out", str(out)])
    assert rc == 0
    assert "fedasync" in (out / "curves.csv").read_text()


def test_errors_exit_nonzero(config_file, tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "missing.ini")]) != 0
    assert "missing.ini" in capsys.readouterr().err
    assert main(["compare", "--config", str(config_file), "--policies", "fedprox",
                 "--out", str(tmp_path / "x")]) != 0
    assert main(["sweep", "--config", str(config_file), "--param", "buffer_size",
                 "--values", "99", "--seeds", "0", "--out", str(tmp_path / "y")]) != 0
    with pytest.raises(SystemExit):
        main(["bogus"])


def test_module_entry_point(config_file, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fedsim", "simulate", "--config",
                           str(config_file), "--out", str(tmp_path / "m")],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
