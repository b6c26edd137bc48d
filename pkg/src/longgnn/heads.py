"""Imputation and prediction heads, the over-smoothing gap, and the loss."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import engine as ng
from . import seeding
from .data import LongitudinalDataset
from .engine import Tensor
from .errors import ContractError
from .graph import HeteroGraph
from .layers import LayerState

HIDDEN = 32


@dataclass
class MLP:
    """Two-layer perceptron with a relu hidden layer of width 32."""

    w1: Tensor   # (in_dim, 32)
    b1: Tensor   # (32,)
    w2: Tensor   # (32, 1)
    b2: Tensor   # (1,)

    def __call__(self, x: Tensor) -> Tensor:
        hidden = ng.relu(ng.add_rowvec(ng.matmul(x, self.w1), self.b1))
        return ng.add_rowvec(ng.matmul(hidden, self.w2), self.b2)

    def trainable(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


def _mlp(rng: np.random.Generator, in_dim: int) -> MLP:
    s1 = np.sqrt(2.0 / (in_dim + HIDDEN))
    s2 = np.sqrt(2.0 / (HIDDEN + 1))
    return MLP(
        w1=Tensor(rng.normal(0.0, s1, size=(in_dim, HIDDEN)), requires_grad=True),
        b1=Tensor(np.zeros(HIDDEN), requires_grad=True),
        w2=Tensor(rng.normal(0.0, s2, size=(HIDDEN, 1)), requires_grad=True),
        b2=Tensor(np.zeros(1), requires_grad=True),
    )


@dataclass
class HeadParams:
    impute: MLP    # input 2d (observation row, covariate row)
    predict: MLP   # input p (full imputed covariate row)

    def trainable(self) -> list[Tensor]:
        return self.impute.trainable() + self.predict.trainable()


def init_heads(p: int, d: int, seed: int) -> HeadParams:
    rng = seeding.substream(seed, seeding.PARAMS, 1)
    return HeadParams(impute=_mlp(rng, 2 * d), predict=_mlp(rng, p))


def impute_covariates(state: LayerState, graph: HeteroGraph, heads: HeadParams) -> Tensor:
    """Head output for every (observation, covariate) pair as an (N, p) table.

    The first head layer splits over the concatenation, so the all-pairs
    hidden activations come from one broadcast add instead of materializing
    N*p concatenated rows.
    """
    d = state.h_obs.shape[1]
    w_obs = ng.slice_rows(heads.impute.w1, 0, d)
    w_cov = ng.slice_rows(heads.impute.w1, d, 2 * d)
    part_obs = ng.matmul(state.h_obs, w_obs)
    part_cov = ng.matmul(state.h_cov, w_cov)
    hidden = ng.relu(ng.add_rowvec(ng.pair_add(part_obs, part_cov), heads.impute.b1))
    out = ng.add_rowvec(ng.matmul(hidden, heads.impute.w2), heads.impute.b2)
    return ng.reshape(out, (graph.num_obs, graph.num_cov))


def impute_single(state: LayerState, heads: HeadParams, obs: int, cov: int) -> float:
    """Reference path: run the head on one concatenated pair."""
    x = Tensor(np.concatenate([state.h_obs.data[obs], state.h_cov.data[cov]])[None, :])
    with ng.no_grad():
        return heads.impute(x).item()


def predict_response(d_hat: Tensor, heads: HeadParams,
                     observed: tuple[np.ndarray, np.ndarray] | None = None) -> Tensor:
    """Predicted response per observation from its fully imputed row.

    With observed=(mask, values) the observed entries override the imputed
    ones before prediction (off by default).
    """
    x = d_hat
    if observed is not None:
        mask, values = observed
        x = ng.add(ng.mul(d_hat, Tensor(1.0 - mask)), Tensor(mask * values))
    out = heads.predict(x)
    return ng.reshape(out, (d_hat.shape[0],))


# --- over-smoothing gap -------------------------------------------------------

def _cos_np(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(a @ b) / (na * nb)


def madgap_subject(embs: np.ndarray) -> float:
    """Remote-ancestor minus immediate-predecessor similarity, one chain.

    Positions are 1-based; entries at positions 1 and 2 contribute nothing.
    """
    n_k = embs.shape[0]
    if n_k <= 2:
        return 0.0
    total = 0.0
    for m in range(3, n_k + 1):
        remote = sum(_cos_np(embs[mp - 1], embs[m - 1]) for mp in range(1, m - 1)) / (m - 2)
        total += remote - _cos_np(embs[m - 1], embs[m - 2])
    return total / n_k


def madgap_pairs(graph: HeteroGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Index pairs and coefficients that linearize the batch gap over cosines."""
    n_subjects = len(graph.chains)
    ia, ib, coef = [], [], []
    for chain in graph.chains:
        n_k = chain.size
        for m in range(3, n_k + 1):
            for mp in range(1, m - 1):
                ia.append(chain[mp - 1])
                ib.append(chain[m - 1])
                coef.append(1.0 / (n_subjects * n_k * (m - 2)))
            ia.append(chain[m - 2])
            ib.append(chain[m - 1])
            coef.append(-1.0 / (n_subjects * n_k))
    return (np.asarray(ia, dtype=np.int64), np.asarray(ib, dtype=np.int64),
            np.asarray(coef, dtype=np.float64))


def madgap_batch(h_obs: Tensor, graph: HeteroGraph) -> Tensor:
    """Differentiable mean of the per-subject gap over the batch."""
    ia, ib, coef = madgap_pairs(graph)
    if ia.size == 0:
        return Tensor(0.0)
    cos = ng.row_cosine(ng.gather_rows(h_obs, ia), ng.gather_rows(h_obs, ib))
    return ng.sum_reduce(ng.mul(cos, Tensor(coef)))


# --- objective -----------------------------------------------------------------

@dataclass
class LossTerms:
    mse_response: float
    mse_impute: float
    madgap: float
    total: float
    lam: float
    tensor: Tensor = field(repr=False, default=None)


def training_loss(d_hat: Tensor, y_hat: Tensor, batch: LongitudinalDataset,
                  madgap: Tensor, lam: float,
                  response_weight: float = 1.0, impute_weight: float = 1.0) -> LossTerms:
    """Masked response MSE plus masked imputation MSE minus lam * gap."""
    parts = []
    n_y = float(batch.M_Y.sum())
    if n_y == 0:
        warnings.warn("no observed responses in batch; response term dropped")
        mse_y_val = 0.0
    else:
        dy = ng.sub(y_hat, Tensor(batch.Y))
        mse_y = ng.scale(ng.sum_reduce(ng.mul(ng.mul(dy, dy), Tensor(batch.M_Y.astype(np.float64)))), 1.0 / n_y)
        mse_y_val = mse_y.item()
        parts.append(ng.scale(mse_y, response_weight))

    n_o = float(batch.M_O.sum())
    if n_o == 0:
        warnings.warn("no observed covariates in batch; imputation term dropped")
        mse_d_val = 0.0
    else:
        dd = ng.sub(d_hat, Tensor(batch.D))
        mse_d = ng.scale(ng.sum_reduce(ng.mul(ng.mul(dd, dd), Tensor(batch.M_O.astype(np.float64)))), 1.0 / n_o)
        mse_d_val = mse_d.item()
        parts.append(ng.scale(mse_d, impute_weight))

    mg_val = madgap.item()
    if lam != 0.0:
        parts.append(ng.scale(madgap, -lam))
    if not parts:
        raise ContractError("loss has no terms: batch carries no observed entries")
    total = parts[0]
    for t in parts[1:]:
        total = ng.add(total, t)
    return LossTerms(
        mse_response=mse_y_val,
        mse_impute=mse_d_val,
        madgap=mg_val,
        total=total.item(),
        lam=float(lam),
        tensor=total,
    )
