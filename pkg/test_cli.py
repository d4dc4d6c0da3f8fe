#!/usr/bin/env python3
"""
Tests for the command-line interface: solve, certify and sweep.
"""

import csv
import json
import os
import sys

import pytest
from click.testing import CliRunner

# Add the parent directory to path to import our modules
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from dpcorder.cli import cli
from dpcorder.config import get_config
from dpcorder.storage import load_instance

SINGLE_USER = {"num_users": 1, "num_tx_antennas": 1, "rate_targets": [1.0], "channels": [[[1.0, 0.0]]]}
ORTHOGONAL = {
    "num_users": 2,
    "num_tx_antennas": 2,
    "rate_targets": [1.0, 1.0],
    "channels": [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]],
}


@pytest.fixture(autouse=True)
def default_config(tmp_path, monkeypatch):
    """Run every command against the built-in defaults."""
    monkeypatch.setenv("CONFIG_FILE", str(tmp_path / "no-config.yml"))
    monkeypatch.delenv("LOG_LEVEL", raising=False)
    monkeypatch.delenv("METRICS_FILE", raising=False)
    get_config.cache_clear()
    yield
    get_config.cache_clear()


@pytest.fixture
def runner():
    return CliRunner()


def write_json(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def write_sweep_config(path, **overrides):
    config = {
        "num_users": 2,
        "num_tx_antennas": 2,
        "rate_grid": [0.5, 1.0, 2.0],
        "trials": 2,
        "seed": 11,
        "methods": ["random", "heuristic", "exhaustive", "relaxation"],
    }
    config.update(overrides)
    return write_json(path, config)


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_solve_single_user(runner, tmp_path):
    path = write_json(tmp_path / "one.json", SINGLE_USER)
    result = runner.invoke(cli, ["solve", "--instance", path])
    assert result.exit_code == 0, result.output
    report = json.loads(result.stdout)
    assert report["status"] == "ok"
    assert [r["method"] for r in report["results"]] == ["random", "heuristic", "exhaustive", "relaxation"]
    for entry in report["results"]:
        assert entry["sum_power"] == pytest.approx(1.0, abs=1e-6)
        assert entry["order"] == [1]
        assert len(entry["downlink"]) >= 1


def test_solve_sampled_methods_are_ordered(runner):
    result = runner.invoke(cli, ["solve", "--sample", "3,3,1.5,4", "--trace"])
    assert result.exit_code == 0, result.output
    powers = {r["method"]: r["sum_power"] for r in json.loads(result.stdout)["results"]}
    slack = 1e-6
    assert powers["relaxation"] <= powers["exhaustive"] * (1 + slack)
    assert powers["exhaustive"] <= powers["heuristic"] * (1 + 1e-10)
    assert powers["heuristic"] <= powers["random"] * (1 + 1e-10)
    relaxation = json.loads(result.stdout)["results"][-1]
    assert relaxation["converged"] is True
    assert relaxation["trace"]


def test_solve_method_selection(runner):
    result = runner.invoke(cli, ["solve", "--sample", "2,2,1.0,0", "--method", "exhaustive"])
    assert result.exit_code == 0, result.output
    results = json.loads(result.stdout)["results"]
    assert len(results) == 1
    assert results[0]["iterations"] == 2
    assert results[0]["certificate"]["verdict"] in ("Optimal", "TimeSharingBoundary")


def test_solve_needs_one_source(runner, tmp_path):
    path = write_json(tmp_path / "one.json", SINGLE_USER)
    assert runner.invoke(cli, ["solve"]).exit_code == 2
    assert runner.invoke(cli, ["solve", "--instance", path, "--sample", "1,1,1.0,0"]).exit_code == 2
    assert runner.invoke(cli, ["solve", "--sample", "1,1,1.0,0", "--method", "greedy"]).exit_code == 2


def test_solve_relaxation_iteration_cap(runner):
    result = runner.invoke(cli, ["solve", "--sample", "3,3,2.0,1", "--method", "relaxation", "--max-iters", "2"])
    assert result.exit_code == 3
    assert json.loads(result.stdout)["error"] == "ConvergenceError"


def test_solve_invalid_tolerance(runner):
    result = runner.invoke(cli, ["solve", "--sample", "1,1,1.0,0", "--tol", "-1"])
    assert result.exit_code == 2
    assert json.loads(result.stdout)["error"] == "ConfigError"


def test_malformed_instance(runner, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"num_users": 1,\n "rate_targets": [1.0,}')
    result = runner.invoke(cli, ["solve", "--instance", str(bad)])
    assert result.exit_code == 2
    report = json.loads(result.stdout)
    assert report["error"] == "InstanceFileError"
    assert "line 2" in report["message"]

    shape = dict(SINGLE_USER, rate_targets=[1.0, 2.0])
    result = runner.invoke(cli, ["solve", "--instance", write_json(tmp_path / "shape.json", shape)])
    assert result.exit_code == 2

    negative = dict(SINGLE_USER, rate_targets=[-1.0])
    result = runner.invoke(cli, ["solve", "--instance", write_json(tmp_path / "neg.json", negative)])
    assert result.exit_code == 2


def test_missing_instance(runner, tmp_path):
    result = runner.invoke(cli, ["solve", "--instance", str(tmp_path / "absent.json")])
    assert result.exit_code == 4
    assert json.loads(result.stdout)["status"] == "error"


def test_save_instance(runner, tmp_path):
    target = tmp_path / "saved" / "instance.json"
    result = runner.invoke(
        cli, ["solve", "--sample", "3,2,1.0,9", "--method", "random", "--save-instance", str(target)]
    )
    assert result.exit_code == 0, result.output
    instance = load_instance(str(target))
    assert instance.num_users == 3
    assert instance.num_tx_antennas == 2

    rerun = runner.invoke(cli, ["solve", "--instance", str(target), "--method", "exhaustive"])
    sampled = runner.invoke(cli, ["solve", "--sample", "3,2,1.0,9", "--method", "exhaustive"])
    assert json.loads(rerun.stdout)["results"] == json.loads(sampled.stdout)["results"]


def test_certify(runner, tmp_path):
    path = write_json(tmp_path / "orth.json", ORTHOGONAL)
    result = runner.invoke(cli, ["certify", "--instance", path, "--order", "2,1"])
    assert result.exit_code == 0, result.output
    report = json.loads(result.stdout)
    assert report["verdict"] == "TimeSharingBoundary"
    assert report["order"] == [2, 1]
    assert report["tie_positions"] == [2]
    assert report["sum_power"] == pytest.approx(2.0)

    single = write_json(tmp_path / "one.json", SINGLE_USER)
    result = runner.invoke(cli, ["certify", "--instance", single, "--order", "1"])
    assert json.loads(result.stdout)["verdict"] == "Optimal"


@pytest.mark.parametrize("order", ["1,1", "1,2,3", "a,b", "0,1"])
def test_certify_invalid_order(runner, tmp_path, order):
    path = write_json(tmp_path / "orth.json", ORTHOGONAL)
    result = runner.invoke(cli, ["certify", "--instance", path, "--order", order])
    assert result.exit_code == 2
    assert json.loads(result.stdout)["error"] == "InstanceValidationError"


def test_sweep(runner, tmp_path):
    config = write_sweep_config(tmp_path / "sweep.json")
    out = tmp_path / "results.csv"
    result = runner.invoke(cli, ["sweep", "--config", config, "--out", str(out)])
    assert result.exit_code == 0, result.output

    rows = read_rows(out)
    assert len(rows) == 3 * 2 * 4
    assert [r["method"] for r in rows[:4]] == ["random", "heuristic", "exhaustive", "relaxation"]
    assert [float(r["rate_target"]) for r in rows[::8]] == [0.5, 1.0, 2.0]
    assert all(r["wall_time"] == "NA" for r in rows)
    assert all(r["iterations"] == "NA" for r in rows if r["method"] == "random")
    assert all(r["time_sharing"] in ("true", "false") for r in rows if r["method"] == "relaxation")
    for r in rows:
        assert float(r["sum_power"]) > 0

    summary = read_rows(tmp_path / "results_summary.csv")
    assert len(summary) == 3 * 4
    assert all(int(s["trials"]) == 2 for s in summary)


def test_sweep_summary_method_ordering(runner, tmp_path):
    """Mean powers per grid point: random > heuristic >= exhaustive >= relaxation"""
    config = write_sweep_config(
        tmp_path / "sweep.json", num_users=3, num_tx_antennas=3, rate_grid=[1.0, 2.0, 3.0], trials=12, seed=5
    )
    out = tmp_path / "ordering.csv"
    result = runner.invoke(cli, ["sweep", "--config", config, "--out", str(out)])
    assert result.exit_code == 0, result.output

    means = {}
    for s in read_rows(tmp_path / "ordering_summary.csv"):
        means.setdefault(float(s["rate_target"]), {})[s["method"]] = float(s["mean_sum_power"])
    assert sorted(means) == [1.0, 2.0, 3.0]
    for rate, power in means.items():
        assert power["random"] > power["heuristic"], rate
        assert power["heuristic"] >= power["exhaustive"] * (1 - 1e-10), rate
        assert power["exhaustive"] >= power["relaxation"] * (1 - 1e-6), rate


def test_sweep_is_reproducible(runner, tmp_path):
    config = write_sweep_config(tmp_path / "sweep.json")
    first = tmp_path / "first.csv"
    second = tmp_path / "second.csv"
    threaded = tmp_path / "threaded.csv"
    assert runner.invoke(cli, ["sweep", "--config", config, "--out", str(first)]).exit_code == 0
    assert runner.invoke(cli, ["sweep", "--config", config, "--out", str(second)]).exit_code == 0
    assert runner.invoke(cli, ["sweep", "--config", config, "--out", str(threaded), "--threads", "3"]).exit_code == 0
    assert first.read_bytes() == second.read_bytes()
    assert first.read_bytes() == threaded.read_bytes()
    assert (tmp_path / "first_summary.csv").read_bytes() == (tmp_path / "threaded_summary.csv").read_bytes()


def test_sweep_wall_time(runner, tmp_path):
    config = write_sweep_config(tmp_path / "sweep.json", trials=1, methods=["random"], record_wall_time=True)
    out = tmp_path / "timed.csv"
    assert runner.invoke(cli, ["sweep", "--config", config, "--out", str(out)]).exit_code == 0
    assert all(float(r["wall_time"]) >= 0.0 for r in read_rows(out))


def test_sweep_invalid_config(runner, tmp_path):
    config = write_sweep_config(tmp_path / "sweep.json", num_users=9)
    result = runner.invoke(cli, ["sweep", "--config", config, "--out", str(tmp_path / "x.csv")])
    assert result.exit_code == 2
    missing = runner.invoke(cli, ["sweep", "--config", str(tmp_path / "absent.yml")])
    assert missing.exit_code == 2


def test_metrics_file(runner, tmp_path):
    metrics = tmp_path / "metrics.prom"
    result = runner.invoke(
        cli, ["--metrics-file", str(metrics), "solve", "--sample", "3,3,1.0,2", "--method", "heuristic"]
    )
    assert result.exit_code == 0, result.output
    text = metrics.read_text()
    assert "dpcorder_solves_total" in text
    assert "dpcorder_heuristic_terminations_total" in text


def test_log_level_option(runner):
    assert runner.invoke(cli, ["--log-level", "loud", "solve", "--sample", "1,1,1.0,0"]).exit_code == 2
    assert runner.invoke(cli, ["--log-level", "debug", "solve", "--sample", "1,1,1.0,0"]).exit_code == 0


def test_modules_are_documented():
    from dpcorder import bench, cli as cli_module, config, metrics, relaxation

    for module in (bench, cli_module, config, metrics, relaxation):
        assert module.__doc__ and module.__doc__.strip(), module.__name__
    text = " ".join(relaxation.__doc__.split())
    assert "projected Newton" in text
    assert "projected gradient" in text


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
