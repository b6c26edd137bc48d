"""Model forward pass: bipartite inductive layers then temporal smoothing.

Each bipartite layer passes relu-transformed (neighbor, edge) messages in
both directions of the observation-covariate graph, mean-aggregates them,
updates node embeddings from (own state, aggregate), and refreshes edge
embeddings from their pre-update endpoints. Temporal layers then push each
observation's embedding one hop down its subject chain, weighted by time
decay, covariate-set overlap, and the cosine similarity of the current
endpoint embeddings; the cosine factor stays differentiable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import engine as ng
from . import seeding
from .engine import Tensor
from .errors import ContractError
from .graph import HeteroGraph


@dataclass
class ModelParams:
    P: list[Tensor]            # per bipartite layer, (2d, d)
    Q: list[Tensor]            # per bipartite layer, (2d, d)
    W: list[Tensor]            # per bipartite layer, (3d, d)
    U: list[Tensor]            # per temporal layer, (2d, d)
    cov_embed: Tensor          # (p, d) learned covariate-node table
    edge_proj: Tensor          # (1, d) scalar-value to edge-embedding projection
    d: int
    gamma: float
    cov_snapshots: list[np.ndarray] | None = None   # frozen per-layer tables for inference

    @property
    def L(self) -> int:
        return len(self.P)

    @property
    def K(self) -> int:
        return len(self.U)

    def trainable(self) -> list[Tensor]:
        return [*self.P, *self.Q, *self.W, *self.U, self.cov_embed, self.edge_proj]

    def parameter_count(self) -> int:
        return sum(t.size for t in self.trainable())


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return Tensor(rng.normal(0.0, std, size=(fan_in, fan_out)), requires_grad=True)


def init_params(p: int, d: int, bipartite_layers: int, temporal_layers: int,
                gamma: float, seed: int) -> ModelParams:
    if gamma <= 1.0:
        raise ContractError("gamma must exceed 1 so chain-edge weights stay nonzero")
    rng = seeding.substream(seed, seeding.PARAMS)
    return ModelParams(
        P=[_glorot(rng, 2 * d, d) for _ in range(bipartite_layers)],
        Q=[_glorot(rng, 2 * d, d) for _ in range(bipartite_layers)],
        W=[_glorot(rng, 3 * d, d) for _ in range(bipartite_layers)],
        U=[_glorot(rng, 2 * d, d) for _ in range(temporal_layers)],
        cov_embed=Tensor(rng.normal(0.0, 1.0 / math.sqrt(d), size=(p, d)), requires_grad=True),
        edge_proj=Tensor(rng.normal(0.0, 1.0 / math.sqrt(d), size=(1, d)), requires_grad=True),
        d=d,
        gamma=float(gamma),
    )


@dataclass
class LayerState:
    h_obs: Tensor   # (num_obs, d)
    h_cov: Tensor   # (num_cov, d)
    e: Tensor       # (num_bipartite_edges, d)


def _concat_matmul(parts: list[Tensor], weight: Tensor) -> Tensor:
    """matmul(concat(parts, axis=1), weight) via row-sliced weights.

    Identical math, but skips materializing the wide concatenation, which
    dominates memory traffic on big edge sets.
    """
    pairs = []
    offset = 0
    for part in parts:
        pairs.append((part, ng.slice_rows(weight, offset, offset + part.shape[1])))
        offset += part.shape[1]
    if offset != weight.shape[0]:
        raise ContractError("weight rows do not cover the concatenated width")
    return ng.linear_combine(pairs)


def init_embeddings(graph: HeteroGraph, params: ModelParams) -> LayerState:
    """All-ones observation rows, learned covariate rows, value-scaled edges."""
    h_obs = Tensor(np.ones((graph.num_obs, params.d)))
    vals = Tensor(graph.edge_val[:, None])          # (E,1), constant
    e = ng.matmul(vals, params.edge_proj)           # (E,d), gradient reaches the projection
    return LayerState(h_obs=h_obs, h_cov=params.cov_embed, e=e)


def bipartite_layer(state: LayerState, graph: HeteroGraph, l: int, params: ModelParams,
                    frozen_cov: list[np.ndarray] | None = None) -> LayerState:
    """One inductive layer over the bipartite graph (1-based layer index l)."""
    P, Q, W = params.P[l - 1], params.Q[l - 1], params.W[l - 1]
    h_obs, h_cov, e = state.h_obs, state.h_cov, state.e

    obs_rows = ng.gather_rows(h_obs, graph.edge_obs)
    cov_rows = ng.gather_rows(h_cov, graph.edge_cov)

    msg_to_obs = ng.relu(_concat_matmul([cov_rows, e], P))
    m_obs = ng.segment_mean(msg_to_obs, graph.edge_obs, graph.num_obs)
    msg_to_cov = ng.relu(_concat_matmul([obs_rows, e], P))
    m_cov = ng.segment_mean(msg_to_cov, graph.edge_cov, graph.num_cov)

    new_obs = ng.relu(_concat_matmul([h_obs, m_obs], Q))
    if frozen_cov is not None:
        new_cov = Tensor(frozen_cov[l])
    else:
        new_cov = ng.relu(_concat_matmul([h_cov, m_cov], Q))

    # edge refresh reads the pre-update endpoint embeddings
    new_e = ng.relu(_concat_matmul([e, obs_rows, cov_rows], W))
    return LayerState(h_obs=new_obs, h_cov=new_cov, e=new_e)


def time_decay(t_pred: float, t_succ: float, delta_max: float) -> float:
    """Exponential decay of the gap, normalized by the subject's largest gap."""
    if delta_max <= 0:
        delta_max = 1.0
    return math.exp(-abs(t_pred - t_succ) / delta_max)


def jaccard_weight(counts: tuple[int, int], gamma: float) -> float:
    """gamma minus the fraction of the successor's covariates seen before."""
    inter, bsize = counts
    ratio = 0.0 if bsize == 0 else inter / bsize
    return gamma - ratio


def chain_edge_constants(graph: HeteroGraph, gamma: float) -> np.ndarray:
    """Per chain edge: time-decay times set-overlap weight (both nonnegative)."""
    if graph.num_chain_edges == 0:
        return np.empty(0)
    decay = np.exp(-graph.oo_gap / graph.oo_dmax)
    ratio = np.where(graph.oo_bsize > 0, graph.oo_inter / np.maximum(graph.oo_bsize, 1), 0.0)
    return decay * (gamma - ratio)


def temporal_edge_weight(state: LayerState, graph: HeteroGraph, edge: int,
                         params: ModelParams) -> float:
    """Diagnostic scalar weight of one chain edge under the current state."""
    i, j = int(graph.oo_pred[edge]), int(graph.oo_succ[edge])
    decay = time_decay(float(graph.obs_time[i]), float(graph.obs_time[j]), float(graph.oo_dmax[edge]))
    jac = jaccard_weight((int(graph.oo_inter[edge]), int(graph.oo_bsize[edge])), params.gamma)
    with ng.no_grad():
        cos = ng.cosine(Tensor(state.h_obs.data[i]), Tensor(state.h_obs.data[j])).item()
    return decay * jac * cos


def temporal_layer(state: LayerState, graph: HeteroGraph, k: int, params: ModelParams) -> LayerState:
    """One smoothing step along every subject chain (1-based layer index k).

    Successors update from (own state, weighted predecessor message); each
    chain's first observation and all covariate/edge embeddings pass through.
    """
    if graph.num_chain_edges == 0:
        return state
    U = params.U[k - 1]
    h_obs = state.h_obs
    const = Tensor(chain_edge_constants(graph, params.gamma))

    h_pred = ng.gather_rows(h_obs, graph.oo_pred)
    h_succ = ng.gather_rows(h_obs, graph.oo_succ)
    w = ng.mul(ng.row_cosine(h_pred, h_succ), const)
    msg = ng.mul(h_pred, ng.expand_cols(w, params.d))
    updated = ng.relu(_concat_matmul([h_succ, msg], U))
    return LayerState(
        h_obs=ng.row_update(h_obs, graph.oo_succ, updated),
        h_cov=state.h_cov,
        e=state.e,
    )


def full_forward(graph: HeteroGraph, params: ModelParams,
                 frozen_cov: list[np.ndarray] | None = None,
                 collect_cov: bool = False):
    """Run L bipartite layers then K temporal layers.

    Returns (final LayerState, covariate-table snapshots or None). With
    frozen_cov, covariate rows follow the given per-layer tables instead of
    updating from the batch, which decouples subjects at inference time.
    """
    if frozen_cov is not None and len(frozen_cov) != params.L + 1:
        raise ContractError("need one frozen covariate table per bipartite layer boundary")
    state = init_embeddings(graph, params)
    if frozen_cov is not None:
        state = LayerState(h_obs=state.h_obs, h_cov=Tensor(frozen_cov[0]), e=state.e)
    snaps = [state.h_cov.data.copy()] if collect_cov else None
    for l in range(1, params.L + 1):
        state = bipartite_layer(state, graph, l, params, frozen_cov=frozen_cov)
        if collect_cov:
            snaps.append(state.h_cov.data.copy())
    for k in range(1, params.K + 1):
        state = temporal_layer(state, graph, k, params)
    return state, snaps
