import json
import re
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from longgnn import cli
from longgnn import data as dm


@pytest.fixture()
def runner():
    return CliRunner()


def small_config(tmp_path, **overrides) -> str:
    cfg = {
        "sim": {"n_subjects": 6, "obs_per_subject": [4, 6], "p": 50, "window": 3,
                "noise_scale": 0.1, "seed": 7},
        "split": {"test_ratio": 0.34, "missing_x": 0.3, "missing_y": 0.3, "seed": 7},
        "train": {"phases": 1, "sample_size": 8, "epochs": 10, "learning_rate": 0.01,
                  "embed_dim": 8, "bipartite_layers": 2, "temporal_layers": 1, "seed": 7},
        "baseline": {"epochs": 30, "learning_rate": 0.01},
        "ablate": {"k_values": [0, 1], "lambdas": [0.0, 0.001]},
        "bench": {"obs_sizes": [200, 400], "obs_per_subject": 5, "p": 50, "sample_size": 10,
                  "phases": 1, "epochs": 5, "embed_dim": 8, "bipartite_layers": 1,
                  "temporal_layers": 1, "seed": 7},
    }
    for key, val in overrides.items():
        cfg[key].update(val)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def run_ok(runner, args):
    result = runner.invoke(cli.main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


# --- simulate -------------------------------------------------------------------

def test_simulate_writes_expected_files(tmp_path, runner):
    cfg = small_config(tmp_path)
    out = tmp_path / "data"
    run_ok(runner, ["simulate", "--config", cfg, "--out", str(out)])
    for name in ("complete.csv", "masked.csv", "truth.csv", "sidecar.json",
                 "simulate_report.json", "simulate_report.metrics.csv"):
        assert (out / name).exists()
    report = json.loads((out / "simulate_report.json").read_text())
    assert report["metrics"]["subjects"] == 6
    assert report["provenance"]["config"]["sim"]["n_subjects"] == 6
    assert report["provenance"]["input_hashes"]["config"]


def test_simulate_idempotent(tmp_path, runner):
    cfg = small_config(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    run_ok(runner, ["simulate", "--config", cfg, "--out", str(out1)])
    run_ok(runner, ["simulate", "--config", cfg, "--out", str(out2)])
    for name in ("complete.csv", "masked.csv", "truth.csv", "sidecar.json",
                 "simulate_report.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_simulate_zero_noise_windows_constant_in_truth_file(tmp_path, runner):
    cfg = small_config(tmp_path, sim={"noise_scale": 0.0})
    out = tmp_path / "data0"
    run_ok(runner, ["simulate", "--config", cfg, "--out", str(out)])
    truth = dm.load_csv(out / "truth.csv")
    for sl in truth.subject_slices():
        y = truth.Y[sl]
        for start in range(0, y.size, 3):
            chunk = y[start:start + 3]
            assert np.all(chunk == chunk[0])


def test_simulate_bad_config_exits_2(tmp_path, runner):
    cfg = small_config(tmp_path, sim={"p": 10})  # too few covariates for the model
    result = runner.invoke(cli.main, ["simulate", "--config", cfg, "--out", str(tmp_path / "x")])
    assert result.exit_code == 2


# --- train / evaluate / impute -----------------------------------------------------

@pytest.fixture()
def pipeline(tmp_path, runner):
    cfg = small_config(tmp_path)
    data = tmp_path / "data"
    run = tmp_path / "run"
    run_ok(runner, ["simulate", "--config", cfg, "--out", str(data)])
    run_ok(runner, ["train", "--config", cfg, "--data", str(data), "--out", str(run)])
    return cfg, data, run


def test_train_outputs(pipeline, tmp_path):
    _, data, run = pipeline
    assert (run / "checkpoint.json").exists()
    report = json.loads((run / "train_report.json").read_text())
    assert report["metrics"]["epochs_total"] == 10
    assert (run / "train_report.timings.json").exists()
    # volatile measurements stay out of the deterministic report
    assert "mean_epoch_seconds" not in json.dumps(report)


def test_train_deterministic_checkpoint(tmp_path, runner):
    cfg = small_config(tmp_path)
    data = tmp_path / "data"
    run_ok(runner, ["simulate", "--config", cfg, "--out", str(data)])
    r1, r2 = tmp_path / "r1", tmp_path / "r2"
    run_ok(runner, ["train", "--config", cfg, "--data", str(data), "--out", str(r1)])
    run_ok(runner, ["train", "--config", cfg, "--data", str(data), "--out", str(r2)])
    assert (r1 / "checkpoint.json").read_bytes() == (r2 / "checkpoint.json").read_bytes()
    assert (r1 / "train_report.json").read_bytes() == (r2 / "train_report.json").read_bytes()


def test_train_missing_data_exits_3(tmp_path, runner):
    cfg = small_config(tmp_path)
    result = runner.invoke(cli.main, ["train", "--config", cfg, "--data",
                                      str(tmp_path / "nope"), "--out", str(tmp_path / "r")])
    assert result.exit_code == 3


def test_train_divergence_exits_4(tmp_path, runner):
    cfg = small_config(tmp_path, train={"learning_rate": 1e200, "epochs": 40})
    data = tmp_path / "data"
    run_ok(runner, ["simulate", "--config", cfg, "--out", str(data)])
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        result = runner.invoke(cli.main, ["train", "--config", cfg, "--data", str(data),
                                          "--out", str(tmp_path / "r")])
    assert result.exit_code == 4


def test_evaluate_checkpoint_mode(pipeline, tmp_path, runner):
    cfg, data, run = pipeline
    out = tmp_path / "eval"
    run_ok(runner, ["evaluate", "--config", cfg, "--data", str(data),
                    "--checkpoint", str(run / "checkpoint.json"), "--out", str(out)])
    report = json.loads((out / "evaluate_report.json").read_text())
    assert report["metrics"]["rmse_response"] > 0.0
    assert "checkpoint" in report["provenance"]["input_hashes"]


def test_evaluate_oracle_predictions_rmse_zero(pipeline, tmp_path, runner):
    cfg, data, _ = pipeline
    out = tmp_path / "oracle"
    run_ok(runner, ["evaluate", "--data", str(data), "--predictions",
                    str(data / "truth.csv"), "--out", str(out)])
    report = json.loads((out / "evaluate_report.json").read_text())
    assert report["metrics"]["rmse_response"] == 0.0
    assert report["metrics"]["rmse_impute"] == 0.0


def test_evaluate_missing_checkpoint_exits_3(pipeline, tmp_path, runner):
    cfg, data, _ = pipeline
    result = runner.invoke(cli.main, ["evaluate", "--config", cfg, "--data", str(data),
                                      "--checkpoint", str(tmp_path / "missing.json"),
                                      "--out", str(tmp_path / "e")])
    assert result.exit_code == 3


def test_evaluate_trials_mode_formats_mean_std(tmp_path, runner):
    cfg = small_config(tmp_path)
    out = tmp_path / "trials"
    result = run_ok(runner, ["evaluate", "--config", cfg, "--trials", "2", "--out", str(out)])
    report = json.loads((out / "evaluate_report.json").read_text())
    formatted = report["metrics"]["summary"]["sht"]["rmse_response"]["formatted"]
    assert re.fullmatch(r"\d+\.\d{3}±\d+\.\d{3}", formatted)
    assert len(report["metrics"]["summary"]["sht"]["rmse_response"]["per_seed"]) == 2
    assert "relative_improvement_vs_mean" in report["metrics"]


def test_impute_fills_all_cells(pipeline, tmp_path, runner):
    cfg, data, run = pipeline
    out = tmp_path / "imp"
    run_ok(runner, ["impute", "--checkpoint", str(run / "checkpoint.json"),
                    "--data", str(data), "--out", str(out)])
    filled = dm.load_csv(out / "filled.csv")
    assert filled.M_O.all() and filled.M_Y.all()
    masked = dm.load_csv(data / "masked.csv")
    obs = masked.M_O == 1
    assert np.allclose(filled.D[obs], masked.D[obs])


def test_impute_idempotent(pipeline, tmp_path, runner):
    cfg, data, run = pipeline
    a, b = tmp_path / "ia", tmp_path / "ib"
    for out in (a, b):
        run_ok(runner, ["impute", "--checkpoint", str(run / "checkpoint.json"),
                        "--data", str(data), "--out", str(out)])
    assert (a / "filled.csv").read_bytes() == (b / "filled.csv").read_bytes()
    assert (a / "impute_report.json").read_bytes() == (b / "impute_report.json").read_bytes()


# --- ablate -----------------------------------------------------------------------

def test_ablate_matrix_shape_and_k0(tmp_path, runner):
    cfg = small_config(tmp_path)
    out = tmp_path / "abl"
    run_ok(runner, ["ablate", "--config", cfg, "--trials", "1", "--out", str(out)])
    report = json.loads((out / "ablate_report.json").read_text())
    cells = report["metrics"]["cells"]
    assert report["metrics"]["matrix_shape"] == [2, 2]
    assert len(cells) == 4
    assert "K=0,lam=0.0" in cells  # bipartite-only row exists


def test_ablate_deterministic(tmp_path, runner):
    cfg = small_config(tmp_path)
    a, b = tmp_path / "a1", tmp_path / "a2"
    for out in (a, b):
        run_ok(runner, ["ablate", "--config", cfg, "--trials", "1", "--out", str(out)])
    assert (a / "ablate_report.json").read_bytes() == (b / "ablate_report.json").read_bytes()


# --- bench ------------------------------------------------------------------------

def test_bench_reports_and_monotone_validation(tmp_path, runner):
    cfg = small_config(tmp_path)
    out = tmp_path / "bench"
    run_ok(runner, ["bench-scalability", "--config", cfg, "--out", str(out)])
    report = json.loads((out / "bench_report.json").read_text())
    timings = json.loads((out / "bench_report.timings.json").read_text())
    assert report["metrics"]["obs_sizes"] == [200, 400]
    assert not report["metrics"]["partial"]
    assert "graph_build_seconds" in timings["measurements"]["rows"][0]
    assert "mean_epoch_seconds" not in json.dumps(report)  # timing lives in the sidecar

    bad = small_config(tmp_path, bench={"obs_sizes": [400, 200]})
    result = runner.invoke(cli.main, ["bench-scalability", "--config", bad,
                                      "--out", str(tmp_path / "bx")])
    assert result.exit_code == 2


def test_bench_deterministic_report(tmp_path, runner):
    cfg = small_config(tmp_path)
    a, b = tmp_path / "ba", tmp_path / "bb"
    for out in (a, b):
        run_ok(runner, ["bench-scalability", "--config", cfg, "--out", str(out)])
    assert (a / "bench_report.json").read_bytes() == (b / "bench_report.json").read_bytes()


# --- misc -------------------------------------------------------------------------

def test_invalid_json_config_exits_2(tmp_path, runner):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    result = runner.invoke(cli.main, ["simulate", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert result.exit_code == 2


def test_unknown_config_key_exits_2(tmp_path, runner):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"train": {"not_a_field": 1}}))
    result = runner.invoke(cli.main, ["train", "--config", str(cfg_path),
                                      "--data", str(tmp_path), "--out", str(tmp_path / "o")])
    assert result.exit_code == 2
