"""Sampling-phase training loop, frozen-parameter inference, and checkpoints.

Each phase draws a fresh subject-wise mini-batch, builds its graph, and runs
a fixed number of epochs of forward / loss / backward / Adam on parameters
shared across phases. Inference runs per subject group with frozen
parameters and frozen per-layer covariate tables captured at the end of
training, so predictions do not depend on how test subjects are grouped.
"""

from __future__ import annotations

import json
import math
import resource
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import engine as ng
from .data import LongitudinalDataset, Scaler, SplitSpec, subset_by_subjects
from .engine import Tensor
from .errors import ContractError, FormatError, NumericsError
from .graph import build_graph, sample_batch
from .heads import HeadParams, MLP, impute_covariates, init_heads, madgap_batch, predict_response, training_loss
from .layers import ModelParams, full_forward, init_params
from .optim import Adam

CHECKPOINT_FORMAT = "longgnn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    phases: int = 20
    sample_size: int = 200
    epochs: int = 1500
    learning_rate: float = 0.001
    lam: float = 0.001
    gamma: float = 1.5
    bipartite_layers: int = 3
    temporal_layers: int = 2
    embed_dim: int = 32
    seed: int = 0
    response_weight: float = 1.0
    impute_weight: float = 1.0
    use_observed_in_predict: bool = False
    report_train_rmse: bool = True   # full-train inference pass after fitting

    def __post_init__(self):
        for name in ("phases", "sample_size", "epochs", "embed_dim", "bipartite_layers"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        if self.temporal_layers < 0:
            raise ContractError("temporal_layers must be nonnegative")
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if self.gamma <= 1.0:
            raise ContractError("gamma must exceed 1")


@dataclass
class FitReport:
    loss_curve: list[float] = field(default_factory=list)
    response_curve: list[float] = field(default_factory=list)
    impute_curve: list[float] = field(default_factory=list)
    madgap_curve: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    epoch_peak_rss_kb: list[int] = field(default_factory=list)
    parameter_count: int = 0
    rmse_response_observed: float = float("nan")
    rmse_impute_observed: float = float("nan")

    def metrics(self) -> dict:
        """Deterministic summary (timings live in volatile_metrics)."""
        return {
            "final_loss": self.loss_curve[-1] if self.loss_curve else float("nan"),
            "final_mse_response": self.response_curve[-1] if self.response_curve else float("nan"),
            "final_mse_impute": self.impute_curve[-1] if self.impute_curve else float("nan"),
            "final_madgap": self.madgap_curve[-1] if self.madgap_curve else float("nan"),
            "epochs_total": len(self.loss_curve),
            "parameter_count": self.parameter_count,
            "rmse_response_train_observed": self.rmse_response_observed,
            "rmse_impute_train_observed": self.rmse_impute_observed,
        }

    def volatile_metrics(self) -> dict:
        secs = self.epoch_seconds
        return {
            "mean_epoch_seconds": float(np.mean(secs)) if secs else float("nan"),
            "median_epoch_seconds": float(np.median(secs)) if secs else float("nan"),
            "peak_rss_kb": max(self.epoch_peak_rss_kb) if self.epoch_peak_rss_kb else 0,
        }


def _trainables(params: ModelParams, heads: HeadParams) -> list[Tensor]:
    return params.trainable() + heads.trainable()


def fit(train_ds: LongitudinalDataset, cfg: TrainConfig):
    """Train on subject-wise mini-batches; returns (params, heads, report)."""
    if int(train_ds.M_Y.sum()) == 0:
        raise ContractError("training data has no observed responses")
    s_eff = min(cfg.sample_size, train_ds.n)
    params = init_params(train_ds.p, cfg.embed_dim, cfg.bipartite_layers,
                         cfg.temporal_layers, cfg.gamma, cfg.seed)
    heads = init_heads(train_ds.p, cfg.embed_dim, cfg.seed)
    opt = Adam(_trainables(params, heads), lr=cfg.learning_rate)
    report = FitReport(parameter_count=params.parameter_count()
                       + sum(t.size for t in heads.trainable()))

    batch = None
    for phase in range(cfg.phases):
        batch = sample_batch(train_ds, s_eff, cfg.seed, phase)
        observed = None
        if cfg.use_observed_in_predict:
            observed = (batch.ds.M_O.astype(np.float64), batch.ds.D)
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            opt.zero_grad()
            ng.reset_tape()
            state, _ = full_forward(batch.graph, params)
            d_hat = impute_covariates(state, batch.graph, heads)
            y_hat = predict_response(d_hat, heads, observed=observed)
            gap = madgap_batch(state.h_obs, batch.graph)
            terms = training_loss(d_hat, y_hat, batch.ds, gap, cfg.lam,
                                  cfg.response_weight, cfg.impute_weight)
            if not math.isfinite(terms.total):
                raise NumericsError(
                    f"loss diverged at phase {phase} epoch {epoch}: "
                    f"total={terms.total} response={terms.mse_response} "
                    f"impute={terms.mse_impute} gap={terms.madgap}"
                )
            ng.backward(terms.tensor)
            opt.step()
            report.loss_curve.append(terms.total)
            report.response_curve.append(terms.mse_response)
            report.impute_curve.append(terms.mse_impute)
            report.madgap_curve.append(terms.madgap)
            report.epoch_seconds.append(time.perf_counter() - t0)
            report.epoch_peak_rss_kb.append(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss)

    # freeze the per-layer covariate tables from the last batch for inference
    with ng.no_grad():
        _, snaps = full_forward(batch.graph, params, collect_cov=True)
    params.cov_snapshots = snaps

    if cfg.report_train_rmse:
        d_hat_tr, y_hat_tr = predict(train_ds, params, heads, cfg)
        obs_d = train_ds.M_O == 1
        obs_y = train_ds.M_Y == 1
        if obs_d.any():
            report.rmse_impute_observed = float(np.sqrt(np.mean((d_hat_tr[obs_d] - train_ds.D[obs_d]) ** 2)))
        if obs_y.any():
            report.rmse_response_observed = float(np.sqrt(np.mean((y_hat_tr[obs_y] - train_ds.Y[obs_y]) ** 2)))
    return params, heads, report


def predict(ds: LongitudinalDataset, params: ModelParams, heads: HeadParams,
            cfg: TrainConfig):
    """Inductive inference over subject groups of at most sample_size.

    Returns (imputed N x p table, predicted length-N responses). Parameters
    are read-only; covariate tables come from the training-time snapshots.
    """
    if params.cov_embed.shape[0] != ds.p:
        raise ContractError(f"model built for p={params.cov_embed.shape[0]}, data has p={ds.p}")
    if params.cov_snapshots is None:
        raise ContractError("params carry no covariate snapshots; train first")
    s_eff = max(1, min(cfg.sample_size, ds.n))
    d_hat = np.empty((ds.N, ds.p))
    y_hat = np.empty(ds.N)
    bounds = np.concatenate([[0], np.cumsum(ds.counts)])
    with ng.no_grad():
        for start in range(0, ds.n, s_eff):
            subjects = np.arange(start, min(start + s_eff, ds.n))
            sub = subset_by_subjects(ds, subjects)
            g = build_graph(sub)
            state, _ = full_forward(g, params, frozen_cov=params.cov_snapshots)
            observed = None
            if cfg.use_observed_in_predict:
                observed = (sub.M_O.astype(np.float64), sub.D)
            dh = impute_covariates(state, g, heads)
            yh = predict_response(dh, heads, observed=observed)
            rows = slice(bounds[subjects[0]], bounds[subjects[-1] + 1])
            d_hat[rows] = dh.data
            y_hat[rows] = yh.data
    ng.reset_tape()
    return d_hat, y_hat


def evaluate_rmse(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    """RMSE over held-out entries (mask == 0)."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    sel = np.asarray(mask) == 0
    if not np.any(sel):
        raise ContractError("no held-out entries to evaluate")
    diff = pred[sel] - truth[sel]
    return float(np.sqrt(np.mean(diff * diff)))


# --- checkpoints --------------------------------------------------------------


def _array_entry(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}


def _array_from(entry: dict, expect_shape=None) -> np.ndarray:
    arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
    if expect_shape is not None and tuple(arr.shape) != tuple(expect_shape):
        raise FormatError(f"checkpoint array shape {arr.shape} != expected {expect_shape}")
    return arr


def _named_arrays(params: ModelParams, heads: HeadParams) -> dict[str, np.ndarray]:
    out = {}
    for group, tensors in (("P", params.P), ("Q", params.Q), ("W", params.W), ("U", params.U)):
        for i, t in enumerate(tensors):
            out[f"{group}.{i}"] = t.data
    out["cov_embed"] = params.cov_embed.data
    out["edge_proj"] = params.edge_proj.data
    for head_name, mlp in (("impute", heads.impute), ("predict", heads.predict)):
        for leaf in ("w1", "b1", "w2", "b2"):
            out[f"{head_name}.{leaf}"] = getattr(mlp, leaf).data
    return out


def save_checkpoint(path, params: ModelParams, heads: HeadParams, cfg: TrainConfig,
                    scaler: Scaler | None = None, split: SplitSpec | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "p": params.cov_embed.shape[0],
        "train_config": asdict(cfg),
        "arrays": {k: _array_entry(v) for k, v in sorted(_named_arrays(params, heads).items())},
        "cov_snapshots": None if params.cov_snapshots is None
        else [_array_entry(a) for a in params.cov_snapshots],
        "scaler": None if scaler is None else {
            "mins": scaler.mins.tolist(),
            "maxs": scaler.maxs.tolist(),
            "empty": scaler.empty.astype(int).tolist(),
        },
        "split": None if split is None else asdict(split),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


@dataclass
class TrainedBundle:
    params: ModelParams
    heads: HeadParams
    cfg: TrainConfig
    scaler: Scaler | None
    split: SplitSpec | None


def load_checkpoint(path) -> TrainedBundle:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError("not a model checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {doc.get('version')}")
    cfg = TrainConfig(**doc["train_config"])
    p = int(doc["p"])
    d = cfg.embed_dim
    params = init_params(p, d, cfg.bipartite_layers, cfg.temporal_layers, cfg.gamma, cfg.seed)
    heads = init_heads(p, d, cfg.seed)
    arrays = doc["arrays"]
    for name, ref in _named_arrays(params, heads).items():
        if name not in arrays:
            raise FormatError(f"checkpoint missing array {name}")
        ref[...] = _array_from(arrays[name], expect_shape=ref.shape)
    if doc.get("cov_snapshots") is not None:
        snaps = [_array_from(e, expect_shape=(p, d)) for e in doc["cov_snapshots"]]
        if len(snaps) != cfg.bipartite_layers + 1:
            raise FormatError("checkpoint snapshot count does not match layer count")
        params.cov_snapshots = snaps
    scaler = None
    if doc.get("scaler") is not None:
        sc = doc["scaler"]
        scaler = Scaler(mins=np.asarray(sc["mins"], dtype=np.float64),
                        maxs=np.asarray(sc["maxs"], dtype=np.float64),
                        empty=np.asarray(sc["empty"], dtype=bool))
    split = None if doc.get("split") is None else SplitSpec(**doc["split"])
    return TrainedBundle(params=params, heads=heads, cfg=cfg, scaler=scaler, split=split)
