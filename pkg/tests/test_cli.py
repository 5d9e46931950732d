import json
import os

import numpy as np
import pytest

from cfcdim import cli
from cfcdim.baselines import load_model
from cfcdim.dataset import load_dataset
from cfcdim.grid import set_zoi
from cfcdim.mobility import load_trace, save_trace
from cfcdim.predictions import write_predictions
from conftest import stationary_trace


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def make_scenario(workdir, seed=1):
    """Small dense grid + trace files the fast commands can chew through."""
    assert run(
        "grid", "generate", "--blocks-x", 2, "--blocks-y", 1, "--block-side", 100,
        "--zoi", "center:2", "--out", "grid.json",
    ) == 0
    assert run(
        "simulate", "--grid", "grid.json", "--arrival-rate", 0.5, "--duration", 40,
        "--seed", seed, "--out", "trace.ndjson.gz",
    ) == 0
    return ["--grid", "grid.json", "--trace", "trace.ndjson.gz",
            "--intervals", "20,20", "--content-size", str(8e6),
            "--alpha-target", "0.4"]


def test_grid_generate_and_inspect(workdir, capsys):
    assert run(
        "grid", "generate", "--blocks-x", 1, "--blocks-y", 1, "--block-side", 150,
        "--zoi", "all", "--out", "grid.json",
    ) == 0
    assert run("grid", "inspect", "--grid", "grid.json") == 0
    doc = json.loads(capsys.readouterr().out.split("\n", 1)[1])
    assert doc["links"] == 4
    assert doc["border_links"] == 4
    assert (workdir / "grid.json.manifest.json").exists()


def test_replay_all_off_reports_infeasible_with_exit_zero(workdir):
    common = make_scenario(workdir)
    code = run(
        "replay", *common, "--strategy", "all-off", "--mc-runs", 1,
        "--features-csv", "features.csv", "--out", "result.json",
    )
    assert code == 0  # evaluation succeeded; the strategy is simply infeasible
    doc = json.loads((workdir / "result.json").read_text())
    assert doc["cost_report"]["feasible"] is False
    assert doc["cost_report"]["alpha"] == [0.0, 0.0]
    assert doc["cost_report"]["cost"] == 0.0
    assert (workdir / "features.csv").read_text().startswith("link,")


def test_replay_all_on_with_benchmark(workdir):
    common = make_scenario(workdir)
    assert run(
        "replay", *common, "--strategy", "all-on", "--mc-runs", 2,
        "--compare-all-on", "--out", "result.json",
    ) == 0
    doc = json.loads((workdir / "result.json").read_text())
    assert doc["cost_report"]["feasible"] is True
    assert doc["cost_report"]["savings_vs_all_on"] == pytest.approx(0.0)


def test_optimize_end_to_end(workdir):
    common = make_scenario(workdir)
    code = run(
        "optimize", *common, "--method", "greedy", "--max-oracle-calls", 120,
        "--mc-runs", 1, "--out", "strategy.json", "--result-out", "opt.json",
        "--log", "runlog.ndjson",
    )
    assert code == 0
    doc = json.loads((workdir / "opt.json").read_text())
    assert doc["cost_report"]["feasible"] is True
    assert doc["cost_report"]["savings_vs_all_on"] >= 0.0
    assert (workdir / "runlog.ndjson").read_text().strip()
    strategy = json.loads((workdir / "strategy.json").read_text())
    assert np.array(strategy["a"]).shape == (7, 2)


def test_optimize_infeasible_all_on_exits_two(workdir, pair_grid):
    grid = set_zoi(pair_grid, {1})
    (workdir / "grid.json").write_text(grid.to_json())
    trace = stationary_trace({0: (310.0, 0.0, 1), 1: (550.0, 0.0, 1)}, duration=10.0)
    save_trace(trace, str(workdir / "trace.ndjson"))
    code = run(
        "optimize", "--grid", "grid.json", "--trace", "trace.ndjson",
        "--intervals", "10", "--mc-runs", 1, "--out", "strategy.json",
    )
    assert code == 2


def test_usage_errors_exit_one(workdir):
    assert run("simulate", "--grid", "missing.json") == 1  # no --out
    assert run("replay", "--config", "nope.toml") == 1
    with pytest.raises(cli.UsageError):
        cli.build_parser().parse_args(["unknown-command"])


def test_config_file_layering(workdir):
    (workdir / "cfg.toml").write_text(
        '[simulate]\narrival_rate = 0.2\nduration = 30.0\n'
    )
    assert run(
        "grid", "generate", "--blocks-x", 1, "--blocks-y", 1, "--block-side", 100,
        "--zoi", "all", "--out", "grid.json",
    ) == 0
    assert run(
        "simulate", "--config", "cfg.toml", "--grid", "grid.json",
        "--out", "a.ndjson",
    ) == 0
    cfg_echo = json.loads((workdir / "a.ndjson").read_text().splitlines()[0])["cfg"]
    assert cfg_echo["arrival_rate"] == 0.2
    assert cfg_echo["duration"] == 30.0
    # explicit flag beats the config file
    assert run(
        "simulate", "--config", "cfg.toml", "--grid", "grid.json",
        "--arrival-rate", 0.4, "--out", "b.ndjson",
    ) == 0
    cfg_echo = json.loads((workdir / "b.ndjson").read_text().splitlines()[0])["cfg"]
    assert cfg_echo["arrival_rate"] == 0.4


def dataset_args(extra=()):
    return [
        "dataset", "build", "--grid", "grid.json", "--records", 24,
        "--arrival-rate", 0.5, "--duration", 40, "--intervals", "20,20",
        "--content-size", str(8e6), "--alpha-target", "0.4", "--mc-runs", 1,
        "--optimizer-share", 0.25, "--sampler-budget", 30,
        "--episodes-per-trace", 4, "--seed", 2,
        "--traces-dir", "traces", "--out", "data.ndjson", *extra,
    ]


def test_dataset_baseline_and_predictions_flow(workdir, capsys):
    make_scenario(workdir)
    assert run(*dataset_args()) == 0
    assert run("dataset", "inspect", "--dataset", "data.ndjson") == 0
    assert run(
        "dataset", "split", "--dataset", "data.ndjson", "--k", 3, "--seed", 1,
        "--out", "folds.json",
    ) == 0
    folds = json.loads((workdir / "folds.json").read_text())["folds"]
    assert len(folds) == 3

    assert run(
        "baseline", "train", "--dataset", "data.ndjson", "--model", "knn",
        "--k", 3, "--out", "knn.json",
    ) == 0
    assert run(
        "baseline", "eval", "--model", "knn.json", "--dataset", "data.ndjson",
        "--scenario", "desk", "--train-size", 24, "--out", "knn_metrics.json",
    ) == 0
    metrics = json.loads((workdir / "knn_metrics.json").read_text())
    row = metrics["rows"][0]
    assert row["algorithm"] == "knn"
    assert 0.0 <= row["f_score"] <= 1.0
    assert 0.0 <= row["rejection_prob"] <= 1.0

    # the cnn interop path must agree with baseline eval on identical inputs
    assert run(
        "cnn", "export-config", "--dataset", "data.ndjson", "--out", "cnn_cfg.json"
    ) == 0
    cfg = json.loads((workdir / "cnn_cfg.json").read_text())
    assert cfg["num_links"] == 7
    assert cfg["tensor_layout"]["height"] * cfg["tensor_layout"]["width"] >= 7

    ds = load_dataset(str(workdir / "data.ndjson"))
    model = load_model(str(workdir / "knn.json"))
    preds = model.predict(ds.feature_matrix(mobility_only=True))
    rows = [
        {
            "record_id": r.record_id,
            "a_levels": [int(v) for v in preds[i][:7]],
            "b_levels": [int(v) for v in preds[i][7:]],
        }
        for i, r in enumerate(ds.records)
    ]
    write_predictions(str(workdir / "preds.ndjson"), rows, 7, 11, source="test")
    assert run(
        "cnn", "eval-predictions", "--predictions", "preds.ndjson",
        "--dataset", "data.ndjson", "--algorithm", "knn-file",
        "--scenario", "desk", "--train-size", 24, "--out", "file_metrics.json",
    ) == 0
    other = json.loads((workdir / "file_metrics.json").read_text())["rows"][0]
    assert other["f_score"] == pytest.approx(row["f_score"])
    assert other["rejection_prob"] == pytest.approx(row["rejection_prob"])
    assert json.loads((workdir / "file_metrics.json").read_text())["details"][
        "parse_warnings"
    ] == []


def test_report_renders_csv_and_figures(workdir):
    common = make_scenario(workdir)
    assert run(
        "replay", *common, "--strategy", "all-on", "--mc-runs", 1,
        "--compare-all-on", "--out", "result.json",
    ) == 0
    assert run(*dataset_args()) == 0
    assert run(
        "baseline", "train", "--dataset", "data.ndjson", "--model", "constant",
        "--a-level", 10, "--b-level", 10, "--out", "const.json",
    ) == 0
    assert run(
        "baseline", "eval", "--model", "const.json", "--dataset", "data.ndjson",
        "--scenario", "desk", "--train-size", 24, "--out", "const_metrics.json",
    ) == 0
    assert run(
        "report", "--inputs", "result.json", "const_metrics.json",
        "--out-dir", "report",
    ) == 0
    files = sorted(os.listdir(workdir / "report"))
    assert "report.csv" in files
    assert "alpha_eval0.png" in files
    assert "holders_eval0.png" in files
    assert "rejection_probability.png" in files
    assert "manifest.json" in files
    csv = (workdir / "report" / "report.csv").read_text()
    assert csv.splitlines()[0] == "scenario,algorithm,train_size,f_score,rejection_prob,savings"
    assert "constant" in csv


def test_pipeline_determinism_byte_identical(workdir):
    make_scenario(workdir, seed=3)
    for tag in ("x", "y"):
        assert run(
            "simulate", "--grid", "grid.json", "--arrival-rate", 0.5,
            "--duration", 40, "--seed", 7, "--out", f"trace_{tag}.ndjson.gz",
        ) == 0
        assert run(
            "replay", "--grid", "grid.json", "--trace", f"trace_{tag}.ndjson.gz",
            "--intervals", "20,20", "--content-size", str(8e6),
            "--alpha-target", "0.4", "--strategy", "all-on", "--mc-runs", 2,
            "--seed", 5, "--scenario", "det", "--out", f"result_{tag}.json",
        ) == 0
    assert (workdir / "trace_x.ndjson.gz").read_bytes() == (
        workdir / "trace_y.ndjson.gz"
    ).read_bytes()
    assert (workdir / "result_x.json").read_bytes() == (
        workdir / "result_y.json"
    ).read_bytes()
