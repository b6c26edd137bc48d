"""Reference imputers and the shared MLP response predictor.

Both imputers fit their statistics on a training split and can replay them
onto held-out data. The predictor reuses the 32-hidden-unit head shape so
baseline comparisons differ only in how covariates are filled.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import engine as ng
from . import seeding
from .data import LongitudinalDataset
from .engine import Tensor
from .errors import ContractError
from .heads import HIDDEN, MLP
from .optim import Adam


def column_means(ds: LongitudinalDataset) -> np.ndarray:
    """Observed-entry mean per covariate; all-missing columns get 0 and a warning."""
    obs = ds.M_O == 1
    counts = obs.sum(axis=0)
    sums = np.where(obs, ds.D, 0.0).sum(axis=0)
    if np.any(counts == 0):
        warnings.warn(f"{int((counts == 0).sum())} covariate(s) fully missing; filled with 0")
    return np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)


def impute_mean(ds: LongitudinalDataset, means: np.ndarray | None = None) -> np.ndarray:
    """Missing entries replaced by the covariate-wise mean."""
    if means is None:
        means = column_means(ds)
    return np.where(ds.M_O == 1, ds.D, means[None, :])


@dataclass
class PopulationTrajectory:
    """Per-covariate mean of observed values at each time step."""

    times: np.ndarray            # sorted unique time steps seen in training
    means: np.ndarray            # (num_times, p); nan where nothing observed
    fallback: np.ndarray         # (p,) overall column means

    def at(self, t: int, cov: int) -> float:
        """Mean at the nearest time with data for this covariate (ties: earlier)."""
        col = self.means[:, cov]
        valid = ~np.isnan(col)
        if not valid.any():
            return float(self.fallback[cov])
        vt = self.times[valid]
        dist = np.abs(vt - t)
        return float(col[valid][np.argmin(dist)])


def population_trajectory(ds: LongitudinalDataset) -> PopulationTrajectory:
    times = np.unique(ds.time_of)
    means = np.full((times.size, ds.p), np.nan)
    for i, t in enumerate(times):
        rows = ds.time_of == t
        m = ds.M_O[rows] == 1
        vals = ds.D[rows]
        counts = m.sum(axis=0)
        sums = np.where(m, vals, 0.0).sum(axis=0)
        means[i] = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return PopulationTrajectory(times=times, means=means, fallback=column_means(ds))


def impute_copy_mean_locf(ds: LongitudinalDataset, traj: PopulationTrajectory | None = None) -> np.ndarray:
    """Within-subject carry-forward, then shift by the population trend.

    A missing value at time t with the last observation at time t0 becomes
    value(t0) + mean(t) - mean(t0); leading gaps fall back to the population
    mean at their own time.
    """
    if traj is None:
        traj = population_trajectory(ds)
    out = ds.D.copy()
    for sl in ds.subject_slices():
        times = ds.time_of[sl]
        for c in range(ds.p):
            obs = ds.M_O[sl.start:sl.stop, c] == 1
            vals = ds.D[sl.start:sl.stop, c]
            last_t, last_v = None, None
            for j in range(times.size):
                if obs[j]:
                    last_t, last_v = int(times[j]), float(vals[j])
                    continue
                t = int(times[j])
                if last_t is None:
                    out[sl.start + j, c] = traj.at(t, c)
                else:
                    out[sl.start + j, c] = last_v + (traj.at(t, c) - traj.at(last_t, c))
    return out


def baseline_predict(d_hat_train: np.ndarray, train: LongitudinalDataset,
                     d_hat_eval: np.ndarray, seed: int = 0,
                     epochs: int = 3000, lr: float = 0.003) -> np.ndarray:
    """Fit the shared 32-unit MLP on observed responses, predict for new rows."""
    obs = train.M_Y == 1
    n_obs = int(obs.sum())
    if n_obs == 0:
        raise ContractError("baseline predictor needs at least one observed response")
    rng = seeding.substream(seed, seeding.BASELINE)
    p = d_hat_train.shape[1]
    s1 = np.sqrt(2.0 / (p + HIDDEN))
    s2 = np.sqrt(2.0 / (HIDDEN + 1))
    mlp = MLP(
        w1=Tensor(rng.normal(0.0, s1, size=(p, HIDDEN)), requires_grad=True),
        b1=Tensor(np.zeros(HIDDEN), requires_grad=True),
        w2=Tensor(rng.normal(0.0, s2, size=(HIDDEN, 1)), requires_grad=True),
        b2=Tensor(np.zeros(1), requires_grad=True),
    )
    x = Tensor(d_hat_train[obs])
    y = train.Y[obs]
    opt = Adam(mlp.trainable(), lr=lr)
    for _ in range(epochs):
        opt.zero_grad()
        ng.reset_tape()
        pred = ng.reshape(mlp(x), (n_obs,))
        diff = ng.sub(pred, Tensor(y))
        loss = ng.mean_reduce(ng.mul(diff, diff))
        if not math.isfinite(loss.item()):
            raise ContractError("baseline MLP diverged")
        ng.backward(loss)
        opt.step()
    with ng.no_grad():
        out = mlp(Tensor(d_hat_eval)).data.reshape(-1)
    ng.reset_tape()
    return out
