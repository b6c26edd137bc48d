"""Command-line harness: simulate, train, evaluate, impute, ablate, benchmark.

Every command reads one JSON config document (sections: sim, split, train,
baseline, ablate, bench), honors --seed as an override for every section
seed, and writes reports through the shared report writer. Exit codes:
0 success, 2 bad config, 3 missing artifact, 4 numerical failure.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import baselines as bl
from .bench import BenchConfig, run_scalability
from .data import (LongitudinalDataset, SplitSpec, apply_missingness, attach_truth,
                   fit_transform_minmax, load_csv, split_subjects, write_csv)
from .errors import ContractError, FormatError, NumericsError
from .experiment import BaselineConfig, run_ablation, run_trials
from .reports import input_hashes, sha256_file, write_report
from .synth import SimConfig, simulate
from .train import TrainConfig, evaluate_rmse, fit, load_checkpoint, predict, save_checkpoint

EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4

COMPLETE_CSV = "complete.csv"
MASKED_CSV = "masked.csv"
TRUTH_CSV = "truth.csv"
SIDECAR_JSON = "sidecar.json"
CHECKPOINT_JSON = "checkpoint.json"


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        _fail(EXIT_MISSING, f"config file not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        _fail(EXIT_CONFIG, f"config is not valid JSON: {e}")


def _section(cfg: dict, name: str, cls, seed: int | None, **extra):
    fields = dict(cfg.get(name, {}))
    fields.update(extra)
    if seed is not None and "seed" in {f.name for f in dataclasses.fields(cls)}:
        fields["seed"] = seed
    if "obs_per_subject" in fields and isinstance(fields["obs_per_subject"], list):
        fields["obs_per_subject"] = tuple(fields["obs_per_subject"])
    if "obs_sizes" in fields and isinstance(fields["obs_sizes"], list):
        fields["obs_sizes"] = tuple(fields["obs_sizes"])
    try:
        return cls(**fields)
    except TypeError as e:
        _fail(EXIT_CONFIG, f"bad {name} section: {e}")
    except ContractError as e:
        _fail(EXIT_CONFIG, f"bad {name} section: {e}")


def _provenance(config: dict, seed: int | None, inputs: dict | None = None) -> dict:
    return {
        "package_version": __version__,
        "config": config,
        "seed": seed,
        "input_hashes": input_hashes(inputs or {}),
    }


def _load_dataset_dir(data_dir: str) -> LongitudinalDataset:
    d = Path(data_dir)
    masked = d / MASKED_CSV
    truth = d / TRUTH_CSV
    if not masked.exists() or not truth.exists():
        _fail(EXIT_MISSING, f"expected {MASKED_CSV} and {TRUTH_CSV} under {data_dir}")
    return attach_truth(load_csv(masked), load_csv(truth))


@click.group()
@click.version_option(__version__)
def main():
    """Longitudinal graph imputation experiments."""


@main.command(name="simulate")
@click.option("--config", "config_path", type=str, default=None, help="JSON config path")
@click.option("--seed", type=int, default=None, help="Override every section seed")
@click.option("--out", "out_dir", type=str, required=True, help="Output directory")
def simulate_cmd(config_path, seed, out_dir):
    """Generate complete, masked, and shadow-truth datasets."""
    config = _load_config(config_path)
    sim = _section(config, "sim", SimConfig, seed)
    split = _section(config, "split", SplitSpec, seed, **({"test_ratio": 0.2}
                     if "test_ratio" not in config.get("split", {}) else {}))
    try:
        complete, indices = simulate(sim)
        masked = apply_missingness(complete, split.missing_x, split.missing_y, sim.seed)
    except ContractError as e:
        _fail(EXIT_CONFIG, str(e))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(complete, out / COMPLETE_CSV)
    write_csv(complete, out / TRUTH_CSV)
    write_csv(masked, out / MASKED_CSV)
    sidecar = {
        "sim": dataclasses.asdict(sim),
        "split": dataclasses.asdict(split),
        "response_indices": indices.tolist(),
    }
    (out / SIDECAR_JSON).write_text(json.dumps(sidecar, sort_keys=True, indent=1) + "\n")
    metrics = {
        "rows": complete.N,
        "subjects": complete.n,
        "covariates": complete.p,
        "observed_x_fraction": float(masked.M_O.mean()),
        "observed_y_fraction": float(masked.M_Y.mean()),
        "output_sha256": {name: sha256_file(out / name)
                          for name in (COMPLETE_CSV, TRUTH_CSV, MASKED_CSV, SIDECAR_JSON)},
    }
    write_report(out, "simulate_report", metrics,
                 _provenance(config, seed, {"config": config_path} if config_path else {}))
    click.echo(f"wrote {complete.N} rows for {complete.n} subjects to {out_dir}")


@main.command(name="train")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--data", "data_dir", type=str, required=True, help="Directory from simulate")
@click.option("--out", "out_dir", type=str, required=True)
def train_cmd(config_path, seed, data_dir, out_dir):
    """Train on the training split and write a checkpoint."""
    config = _load_config(config_path)
    split = _section(config, "split", SplitSpec, seed)
    train_cfg = _section(config, "train", TrainConfig, seed)
    ds = _load_dataset_dir(data_dir)
    try:
        train_m, test_m = split_subjects(ds, split)
        train_s, _, scaler = fit_transform_minmax(train_m, test_m)
        params, heads, report = fit(train_s, train_cfg)
    except NumericsError as e:
        _fail(EXIT_NUMERIC, str(e))
    except ContractError as e:
        _fail(EXIT_CONFIG, str(e))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / CHECKPOINT_JSON, params, heads, train_cfg, scaler=scaler, split=split)
    metrics = dict(report.metrics())
    metrics["checkpoint_sha256"] = sha256_file(out / CHECKPOINT_JSON)
    metrics["train_subjects"] = train_s.n
    write_report(out, "train_report", metrics,
                 _provenance(config, seed, _data_inputs(data_dir, config_path)),
                 timings=report.volatile_metrics())
    click.echo(f"checkpoint written to {out / CHECKPOINT_JSON}")


def _data_inputs(data_dir, config_path=None) -> dict:
    d = Path(data_dir)
    inputs = {MASKED_CSV: d / MASKED_CSV, TRUTH_CSV: d / TRUTH_CSV}
    if config_path:
        inputs["config"] = config_path
    return inputs


@main.command(name="evaluate")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--data", "data_dir", type=str, default=None)
@click.option("--checkpoint", "checkpoint_path", type=str, default=None)
@click.option("--predictions", "predictions_path", type=str, default=None,
              help="Score a pre-made predictions CSV instead of a checkpoint")
@click.option("--trials", type=int, default=None, help="Run end-to-end trials from config")
@click.option("--out", "out_dir", type=str, required=True)
def evaluate_cmd(config_path, seed, data_dir, checkpoint_path, predictions_path, trials, out_dir):
    """Score held-out responses (and imputations) as RMSE."""
    config = _load_config(config_path)
    if trials is not None:
        _evaluate_trials(config, config_path, seed, trials, out_dir)
        return
    if data_dir is None:
        _fail(EXIT_CONFIG, "score mode needs --data (or use --trials)")
    ds = _load_dataset_dir(data_dir)
    if predictions_path is not None:
        _evaluate_predictions(config, config_path, seed, ds, data_dir, predictions_path, out_dir)
        return
    if checkpoint_path is None:
        _fail(EXIT_CONFIG, "need --checkpoint or --predictions (or --trials)")
    if not Path(checkpoint_path).exists():
        _fail(EXIT_MISSING, f"checkpoint not found: {checkpoint_path}")
    bundle = load_checkpoint(checkpoint_path)
    if bundle.split is None or bundle.scaler is None:
        _fail(EXIT_CONFIG, "checkpoint lacks split/scaler provenance; cannot rebuild the test view")
    try:
        _, test_m = split_subjects(ds, bundle.split)
        test_s = bundle.scaler.transform_dataset(test_m, clip=True)
        d_hat_s, y_hat = predict(test_s, bundle.params, bundle.heads, bundle.cfg)
    except NumericsError as e:
        _fail(EXIT_NUMERIC, str(e))
    except ContractError as e:
        _fail(EXIT_CONFIG, str(e))
    d_hat = bundle.scaler.inverse_matrix(d_hat_s)
    try:
        metrics = {
            "rmse_response": evaluate_rmse(y_hat, test_m.Y_true, test_m.M_Y),
            "rmse_impute": _masked_impute_rmse(d_hat, test_m),
            "test_subjects": test_m.n,
            "test_rows": test_m.N,
        }
    except ContractError as e:
        _fail(EXIT_CONFIG, str(e))
    inputs = _data_inputs(data_dir, config_path)
    inputs["checkpoint"] = checkpoint_path
    write_report(out_dir, "evaluate_report", metrics, _provenance(config, seed, inputs))
    click.echo(f"rmse_response={metrics['rmse_response']:.6f}")


def _masked_impute_rmse(d_hat: np.ndarray, ds: LongitudinalDataset) -> float:
    held = ds.M_O == 0
    if not held.any():
        return float("nan")
    return evaluate_rmse(d_hat[held], ds.D_true[held], np.zeros(int(held.sum())))


def _evaluate_predictions(config, config_path, seed, ds, data_dir, predictions_path, out_dir):
    if not Path(predictions_path).exists():
        _fail(EXIT_MISSING, f"predictions file not found: {predictions_path}")
    pred = load_csv(predictions_path)
    if pred.N != ds.N or pred.p != ds.p:
        _fail(EXIT_CONFIG, "predictions file does not match the dataset shape")
    metrics = {
        "rmse_response": evaluate_rmse(pred.Y, ds.Y_true, ds.M_Y),
        "rmse_impute": _masked_impute_rmse(pred.D, ds),
        "rows": ds.N,
    }
    inputs = _data_inputs(data_dir, config_path)
    inputs["predictions"] = predictions_path
    write_report(out_dir, "evaluate_report", metrics, _provenance(config, seed, inputs))
    click.echo(f"rmse_response={metrics['rmse_response']:.6f}")


def _evaluate_trials(config, config_path, seed, trials, out_dir):
    sim = _section(config, "sim", SimConfig, seed)
    split = _section(config, "split", SplitSpec, seed, **({"test_ratio": 0.2}
                     if "test_ratio" not in config.get("split", {}) else {}))
    train_cfg = _section(config, "train", TrainConfig, seed)
    baseline_cfg = _section(config, "baseline", BaselineConfig, None)
    methods = tuple(config.get("methods", ["sht", "mean", "locf"]))
    base_seed = seed if seed is not None else sim.seed
    try:
        result = run_trials(sim, split, train_cfg, base_seed, trials,
                            methods=methods, baseline_cfg=baseline_cfg)
    except NumericsError as e:
        _fail(EXIT_NUMERIC, str(e))
    except ContractError as e:
        _fail(EXIT_CONFIG, str(e))
    metrics = {"trials": trials, "seeds": result["seeds"], "summary": result["summary"]}
    if "sht" in methods and "mean" in methods:
        sht = result["summary"]["sht"]["rmse_response"]["mean"]
        mean_b = result["summary"]["mean"]["rmse_response"]["mean"]
        metrics["relative_improvement_vs_mean"] = (mean_b - sht) / mean_b
    write_report(out_dir, "evaluate_report", metrics,
                 _provenance(config, seed, {"config": config_path} if config_path else {}))
    for method in methods:
        click.echo(f"{method}: rmse_response {result['summary'][method]['rmse_response']['formatted']}")


@main.command(name="impute")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--checkpoint", "checkpoint_path", type=str, required=True)
@click.option("--data", "data_dir", type=str, required=True)
@click.option("--out", "out_dir", type=str, required=True)
def impute_cmd(config_path, checkpoint_path, data_dir, out_dir):
    """Fill every masked cell and response; write the completed CSV."""
    config = _load_config(config_path)
    if not Path(checkpoint_path).exists():
        _fail(EXIT_MISSING, f"checkpoint not found: {checkpoint_path}")
    bundle = load_checkpoint(checkpoint_path)
    if bundle.scaler is None:
        _fail(EXIT_CONFIG, "checkpoint lacks the fitted scaler")
    ds = _load_dataset_dir(data_dir)
    try:
        ds_s = bundle.scaler.transform_dataset(ds, clip=True)
        d_hat_s, y_hat = predict(ds_s, bundle.params, bundle.heads, bundle.cfg)
    except NumericsError as e:
        _fail(EXIT_NUMERIC, str(e))
    except ContractError as e:
        _fail(EXIT_CONFIG, str(e))
    d_hat = bundle.scaler.inverse_matrix(d_hat_s)
    filled = dataclasses.replace(
        ds,
        D=np.where(ds.M_O == 1, ds.D, d_hat),
        Y=np.where(ds.M_Y == 1, ds.Y, y_hat),
        M_O=np.ones_like(ds.M_O),
        M_Y=np.ones_like(ds.M_Y),
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(filled, out / "filled.csv")
    metrics = {
        "rows": ds.N,
        "filled_covariate_cells": int((ds.M_O == 0).sum()),
        "filled_responses": int((ds.M_Y == 0).sum()),
        "output_sha256": {"filled.csv": sha256_file(out / "filled.csv")},
    }
    inputs = _data_inputs(data_dir, config_path)
    inputs["checkpoint"] = checkpoint_path
    write_report(out, "impute_report", metrics, _provenance(config, None, inputs))
    click.echo(f"filled table written to {out / 'filled.csv'}")


@main.command(name="ablate")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--trials", type=int, default=5)
@click.option("--out", "out_dir", type=str, required=True)
def ablate_cmd(config_path, seed, trials, out_dir):
    """Sweep temporal depth and the gap penalty; report the RMSE matrix."""
    config = _load_config(config_path)
    sim = _section(config, "sim", SimConfig, seed)
    split = _section(config, "split", SplitSpec, seed, **({"test_ratio": 0.2}
                     if "test_ratio" not in config.get("split", {}) else {}))
    train_cfg = _section(config, "train", TrainConfig, seed)
    ab = config.get("ablate", {})
    k_values = tuple(ab.get("k_values", [0, 1, 2, 3]))
    lambdas = tuple(ab.get("lambdas", [0.0, 0.001]))
    base_seed = seed if seed is not None else sim.seed
    try:
        result = run_ablation(sim, split, train_cfg, base_seed, trials,
                              k_values=k_values, lambdas=lambdas)
    except NumericsError as e:
        _fail(EXIT_NUMERIC, str(e))
    except ContractError as e:
        _fail(EXIT_CONFIG, str(e))
    write_report(out_dir, "ablate_report", result,
                 _provenance(config, seed, {"config": config_path} if config_path else {}))
    for name, cell in result["cells"].items():
        click.echo(f"{name}: {cell['formatted']}")


@main.command(name="bench-scalability")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=str, required=True)
def bench_cmd(config_path, seed, out_dir):
    """Measure per-epoch time and training memory across dataset sizes."""
    config = _load_config(config_path)
    bench = _section(config, "bench", BenchConfig, seed)
    deterministic, measured = run_scalability(bench)
    write_report(out_dir, "bench_report", deterministic,
                 _provenance(config, seed, {"config": config_path} if config_path else {}),
                 timings=measured)
    if "epoch_time_ratio_last_vs_first" in measured:
        click.echo(f"epoch time ratio: {measured['epoch_time_ratio_last_vs_first']:.3f}")
    if deterministic["partial"]:
        click.echo("benchmark incomplete; see the report for failed sizes", err=True)


if __name__ == "__main__":
    main()
