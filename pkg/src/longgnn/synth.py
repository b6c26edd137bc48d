"""Synthetic longitudinal datasets: AR(1) covariate paths and windowed responses.

Covariates follow per-subject order-1 autoregressive latent paths so that
adjacent visits are correlated, then get min-max scaled into [0, 1]. The
response for a visit is the mean of a fixed nonlinear function of its
window's covariate rows plus i.i.d. Gaussian noise, so with zero noise the
response is piecewise constant inside each temporal window.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import seeding
from .data import LongitudinalDataset
from .errors import ContractError

AR_COEFF = 0.8
MODEL_TERMS = {"model-1": 15, "model-2": 32}
DEFAULT_NOISE = {"model-1": 0.175, "model-2": 0.2}
_LOG_FLOOR = 1e-6


@dataclass(frozen=True)
class SimConfig:
    n_subjects: int
    obs_per_subject: tuple[int, int] = (6, 12)
    p: int = 50
    window: int = 3
    noise_scale: float | None = None
    response_model: str = "model-1"
    seed: int = 0

    def __post_init__(self):
        if self.response_model not in MODEL_TERMS:
            raise ContractError(f"unknown response model {self.response_model!r}")
        if self.n_subjects < 1:
            raise ContractError("need at least one subject")
        lo, hi = self.obs_per_subject
        if not (1 <= lo <= hi):
            raise ContractError(f"bad obs_per_subject range {self.obs_per_subject}")
        if self.window < 1:
            raise ContractError("window must be >= 1")
        min_p = 50 if self.response_model == "model-1" else 100
        if self.p < min_p:
            raise ContractError(f"{self.response_model} needs p >= {min_p}, got {self.p}")
        if self.noise_scale is not None and self.noise_scale < 0:
            raise ContractError("noise scale must be nonnegative")

    @property
    def sigma(self) -> float:
        return DEFAULT_NOISE[self.response_model] if self.noise_scale is None else float(self.noise_scale)


def gen_covariates(cfg: SimConfig) -> LongitudinalDataset:
    """Fully observed covariate trajectories, no response values yet."""
    blocks = []
    subj_of, times = [], []
    stationary_sd = 1.0 / np.sqrt(1.0 - AR_COEFF ** 2)
    for k in range(cfg.n_subjects):
        rng = seeding.substream(cfg.seed, seeding.COVARIATES, k)
        lo, hi = cfg.obs_per_subject
        n_k = int(rng.integers(lo, hi + 1))
        innov = rng.normal(size=(n_k, cfg.p))
        x = np.empty_like(innov)
        x[0] = innov[0] * stationary_sd
        for t in range(1, n_k):
            x[t] = AR_COEFF * x[t - 1] + innov[t]
        blocks.append(x)
        subj_of.append(np.full(n_k, k, dtype=np.int64))
        times.append(np.arange(1, n_k + 1, dtype=np.int64))
    D = np.concatenate(blocks, axis=0)
    lo_v, hi_v = D.min(axis=0), D.max(axis=0)
    span = hi_v - lo_v
    span[span == 0.0] = 1.0
    D = (D - lo_v) / span
    N = D.shape[0]
    return LongitudinalDataset(
        D=D,
        Y=np.zeros(N),
        M_O=np.ones((N, cfg.p), dtype=np.uint8),
        M_Y=np.zeros(N, dtype=np.uint8),
        subject_of=np.concatenate(subj_of),
        time_of=np.concatenate(times),
        subject_ids=[f"s{k}" for k in range(cfg.n_subjects)],
    )


def draw_response_indices(cfg: SimConfig) -> np.ndarray:
    """The covariate columns feeding the response, drawn once per trial."""
    rng = seeding.substream(cfg.seed, seeding.RESPONSE_IDX)
    return np.sort(rng.choice(cfg.p, size=MODEL_TERMS[cfg.response_model], replace=False))


def response_model_1(x: np.ndarray) -> np.ndarray:
    """15-term mixed linear/nonlinear response; x holds the selected columns.

    Accepts (..., 15) arrays of min-max scaled values. The bare logarithm in
    the fourth term is floored at 1e-6 to stay finite at zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != 15:
        raise ContractError(f"model-1 needs 15 selected covariates, got {x.shape[-1]}")
    c = np.moveaxis(x, -1, 0)
    x5 = np.maximum(c[4], _LOG_FLOOR)
    return (
        0.25 * c[0]
        + 2.0 * (np.log(c[1] + 10.0) / 25.0) ** 2
        - 0.4 * c[2]
        - 0.15 * (c[3] + 5.0 * np.exp(-5.0 * (1.5 - np.log(x5)) ** 2 / 2.0))
        - 0.25 * np.log(c[5] + 1.0)
        + 0.4 * c[6]
        + 0.021 * np.sin(c[7])
        + 0.04 * np.sqrt(c[8])
        + 0.1 * np.exp(c[9])
        + 0.05 * np.log(c[10] + 1.0)
        + 0.02 * np.tan(c[11])
        + 0.015 * np.cos(c[12])
        + 0.07 * np.log(c[13] + 1.0)
        + 3.5 * np.sqrt(c[14])
    )


def response_model_2(x: np.ndarray) -> np.ndarray:
    """32-term response with higher-order and clipped terms; x is (..., 32)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != 32:
        raise ContractError(f"model-2 needs 32 selected covariates, got {x.shape[-1]}")
    c = np.moveaxis(x, -1, 0)
    two_pi = 2.0 * np.pi
    return (
        0.3 * np.sqrt(c[0])
        - 0.4 * c[1] ** 2
        + 0.15 * np.log(c[2] + 1e-6)
        + 0.2 * np.exp(0.5 * c[3])
        - 0.1 * c[4]
        + 0.05 * np.sin(two_pi * c[5])
        + 0.25 * np.log1p(c[6])
        - 0.1 * np.cos(two_pi * c[7])
        + 0.35 * np.tan(np.clip(c[8], -0.5, 0.5))
        + 0.05 * np.arcsin(np.clip(c[9], -1.0, 1.0))
        + 0.2 * c[10] ** 3
        - 0.3 * np.sqrt(c[11])
        + 0.4 * np.log(c[12] + 1.0) / 10.0
        + 0.15 * np.sin(two_pi * c[13])
        - 0.1 * np.log1p(c[14])
        + 0.1 * np.exp(c[15])
        - 0.05 * np.log(c[16] + 1.0)
        + 0.2 * c[17] ** 2
        + 0.3 * np.cos(c[18])
        - 0.07 * np.tan(c[19])
        + 0.05 * np.sin(c[20]) / (c[21] + 1.0)
        + 0.25 * np.log1p(c[22])
        + 0.15 * np.arcsin(np.clip(c[23], -1.0, 1.0))
        + 0.1 * c[24] ** 3
        - 0.05 * np.sqrt(c[25])
        + 0.07 * np.log(c[26] + 1.0)
        + 0.2 * np.tan(c[27]) / (1.0 + c[28] ** 2)
        - 0.1 * np.exp(c[29])
        + 0.3 * np.log(c[30] + 10.0)
        + 0.25 * c[31]
    )


def response_fn(model_id: str):
    return response_model_1 if model_id == "model-1" else response_model_2


def windowed_response(ds: LongitudinalDataset, cfg: SimConfig,
                      indices: np.ndarray | None = None) -> LongitudinalDataset:
    """Fill Y with window means of the response function plus noise.

    Each subject's visits are chunked into consecutive windows of cfg.window
    positions (the last window may be shorter). Every visit in a window gets
    that window's mean response plus its own N(0, sigma^2) draw.
    """
    if not ds.M_O.all():
        raise ContractError("windowed_response needs fully observed covariates")
    if indices is None:
        indices = draw_response_indices(cfg)
    fn = response_fn(cfg.response_model)
    Y = np.empty(ds.N)
    w = cfg.window
    for k, sl in enumerate(ds.subject_slices()):
        vals = fn(ds.D[sl][:, indices])
        n_k = vals.shape[0]
        mu = np.empty(n_k)
        for start in range(0, n_k, w):
            stop = min(start + w, n_k)
            mu[start:stop] = vals[start:stop].mean()
        rng = seeding.substream(cfg.seed, seeding.RESPONSE_NOISE, k)
        eps = rng.normal(0.0, cfg.sigma, size=n_k) if cfg.sigma > 0 else np.zeros(n_k)
        Y[sl] = mu + eps
    return replace(ds, Y=Y, M_Y=np.ones(ds.N, dtype=np.uint8))


def simulate(cfg: SimConfig) -> tuple[LongitudinalDataset, np.ndarray]:
    """Complete synthetic dataset plus the drawn response indices."""
    indices = draw_response_indices(cfg)
    ds = windowed_response(gen_covariates(cfg), cfg, indices)
    return ds, indices
