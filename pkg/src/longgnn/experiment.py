"""End-to-end trials: simulate, split, mask, scale, train, score.

One trial is fully determined by its seed: data generation, the subject
split, both missingness masks, parameter initialization, and batch sampling
all derive purpose-tagged substreams from it. Multi-trial runs step the seed
and aggregate as mean and standard deviation per method.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import baselines as bl
from .data import LongitudinalDataset, SplitSpec, apply_missingness, fit_transform_minmax, split_subjects
from .synth import SimConfig, simulate
from .train import TrainConfig, evaluate_rmse, fit, predict

METHODS = ("sht", "mean", "locf")


@dataclass(frozen=True)
class BaselineConfig:
    epochs: int = 3000
    learning_rate: float = 0.003


def _with_seed(cfg, seed: int):
    return dataclasses.replace(cfg, seed=seed)


def prepare_trial(sim_cfg: SimConfig, split: SplitSpec, seed: int):
    """Generate, split, mask, and scale one trial's data."""
    complete, indices = simulate(_with_seed(sim_cfg, seed))
    train_c, test_c = split_subjects(complete, _with_seed(split, seed))
    train_m = apply_missingness(train_c, split.missing_x, split.missing_y, seed, stream=0)
    test_m = apply_missingness(test_c, split.missing_x, split.missing_y, seed, stream=1)
    train_s, test_s, scaler = fit_transform_minmax(train_m, test_m)
    return train_s, test_s, scaler, indices


def score_predictions(ds: LongitudinalDataset, d_hat: np.ndarray, y_hat: np.ndarray) -> dict:
    """Response RMSE on held-out responses, imputation RMSE on held-out entries."""
    out = {"rmse_response": evaluate_rmse(y_hat, ds.Y_true, ds.M_Y)}
    if np.any(ds.M_O == 0):
        out["rmse_impute"] = evaluate_rmse(d_hat[ds.M_O == 0], ds.D_true[ds.M_O == 0],
                                           np.zeros(int((ds.M_O == 0).sum())))
    else:
        out["rmse_impute"] = float("nan")
    return out


def run_trial(sim_cfg: SimConfig, split: SplitSpec, train_cfg: TrainConfig, seed: int,
              methods=METHODS, baseline_cfg: BaselineConfig = BaselineConfig()) -> dict:
    train_s, test_s, _, _ = prepare_trial(sim_cfg, split, seed)
    results: dict[str, dict] = {}
    if "sht" in methods:
        params, heads, report = fit(train_s, _with_seed(train_cfg, seed))
        d_hat, y_hat = predict(test_s, params, heads, train_cfg)
        results["sht"] = score_predictions(test_s, d_hat, y_hat)
        results["sht"]["rmse_response_train_observed"] = report.rmse_response_observed
    if "mean" in methods:
        means = bl.column_means(train_s)
        d_tr = bl.impute_mean(train_s, means)
        d_te = bl.impute_mean(test_s, means)
        y_te = bl.baseline_predict(d_tr, train_s, d_te, seed=seed,
                                   epochs=baseline_cfg.epochs, lr=baseline_cfg.learning_rate)
        results["mean"] = score_predictions(test_s, d_te, y_te)
    if "locf" in methods:
        traj = bl.population_trajectory(train_s)
        d_tr = bl.impute_copy_mean_locf(train_s, traj)
        d_te = bl.impute_copy_mean_locf(test_s, traj)
        y_te = bl.baseline_predict(d_tr, train_s, d_te, seed=seed,
                                   epochs=baseline_cfg.epochs, lr=baseline_cfg.learning_rate)
        results["locf"] = score_predictions(test_s, d_te, y_te)
    return results


def paper_style(mean: float, std: float) -> str:
    return f"{mean:.3f}±{std:.3f}"


def aggregate(per_seed: list[dict]) -> dict:
    """Mean, std, and table-style strings per method and metric."""
    out: dict[str, dict] = {}
    for method in per_seed[0]:
        out[method] = {}
        for metric in per_seed[0][method]:
            vals = np.array([t[method][metric] for t in per_seed], dtype=np.float64)
            mean = float(np.mean(vals))
            std = float(np.std(vals))
            out[method][metric] = {
                "mean": mean,
                "std": std,
                "formatted": paper_style(mean, std),
                "per_seed": vals.tolist(),
            }
    return out


def run_trials(sim_cfg: SimConfig, split: SplitSpec, train_cfg: TrainConfig,
               base_seed: int, trials: int, methods=METHODS,
               baseline_cfg: BaselineConfig = BaselineConfig()) -> dict:
    per_seed = [run_trial(sim_cfg, split, train_cfg, base_seed + t, methods, baseline_cfg)
                for t in range(trials)]
    return {
        "seeds": list(range(base_seed, base_seed + trials)),
        "per_seed": per_seed,
        "summary": aggregate(per_seed),
    }


def run_ablation(sim_cfg: SimConfig, split: SplitSpec, train_cfg: TrainConfig,
                 base_seed: int, trials: int,
                 k_values=(0, 1, 2, 3), lambdas=(0.0, 0.001)) -> dict:
    """RMSE matrix over temporal depth and gap-penalty settings.

    One dataset per seed, shared by every (K, lambda) cell of that seed.
    """
    cells: dict[str, dict] = {}
    per_cell_values = np.zeros((len(k_values), len(lambdas), trials))
    for t in range(trials):
        seed = base_seed + t
        train_s, test_s, _, _ = prepare_trial(sim_cfg, split, seed)
        for i, k in enumerate(k_values):
            for j, lam in enumerate(lambdas):
                cfg = dataclasses.replace(train_cfg, temporal_layers=int(k), lam=float(lam), seed=seed)
                params, heads, _ = fit(train_s, cfg)
                d_hat, y_hat = predict(test_s, params, heads, cfg)
                per_cell_values[i, j, t] = score_predictions(test_s, d_hat, y_hat)["rmse_response"]
    for i, k in enumerate(k_values):
        for j, lam in enumerate(lambdas):
            vals = per_cell_values[i, j]
            cells[f"K={k},lam={lam}"] = {
                "temporal_layers": int(k),
                "lam": float(lam),
                "mean": float(vals.mean()),
                "std": float(vals.std()),
                "formatted": paper_style(float(vals.mean()), float(vals.std())),
                "per_seed": vals.tolist(),
            }
    return {
        "seeds": list(range(base_seed, base_seed + trials)),
        "k_values": list(int(k) for k in k_values),
        "lambdas": list(float(x) for x in lambdas),
        "matrix_shape": [len(k_values), len(lambdas)],
        "cells": cells,
    }
