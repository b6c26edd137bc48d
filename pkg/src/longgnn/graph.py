"""Heterogeneous graph over observations and covariates.

Two edge families: undirected attributed bipartite edges carrying the
observed values, and directed per-subject chains linking time-adjacent
observations. Batches sample whole subjects, so chains never break; the
covariate node set is always complete.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .data import LongitudinalDataset, subset_by_subjects
from .errors import ContractError


@dataclass
class HeteroGraph:
    num_obs: int
    num_cov: int
    edge_obs: np.ndarray     # (E,) observation index per bipartite edge
    edge_cov: np.ndarray     # (E,) covariate index
    edge_val: np.ndarray     # (E,) observed value
    oo_pred: np.ndarray      # (M,) predecessor observation per chain edge
    oo_succ: np.ndarray      # (M,) successor observation
    oo_gap: np.ndarray       # (M,) |t_succ - t_pred|
    oo_dmax: np.ndarray      # (M,) subject's largest adjacent gap, floored at 1
    oo_inter: np.ndarray     # (M,) |A ∩ B| of observed-covariate sets
    oo_bsize: np.ndarray     # (M,) |B|, successor's observed-covariate count
    chains: list[np.ndarray]  # per subject: observation indices in time order
    obs_subject: np.ndarray
    obs_time: np.ndarray
    obs_mask: np.ndarray      # (num_obs, num_cov) observedness rows
    obs_adj: list[np.ndarray] = field(repr=False, default_factory=list)
    cov_adj: list[np.ndarray] = field(repr=False, default_factory=list)

    @property
    def num_bipartite_edges(self) -> int:
        return int(self.edge_obs.size)

    @property
    def num_chain_edges(self) -> int:
        return int(self.oo_pred.size)


def build_graph(ds: LongitudinalDataset) -> HeteroGraph:
    """Materialize nodes and both edge families from a dataset."""
    rows, cols = np.nonzero(ds.M_O)
    vals = ds.D[rows, cols]

    chains = [np.arange(sl.start, sl.stop, dtype=np.int64) for sl in ds.subject_slices()]
    preds, succs, gaps, dmaxs = [], [], [], []
    for chain in chains:
        if chain.size < 2:
            continue
        t = ds.time_of[chain].astype(np.float64)
        gap = np.abs(np.diff(t))
        dmax = gap.max()
        if dmax <= 0:
            dmax = 1.0
        preds.append(chain[:-1])
        succs.append(chain[1:])
        gaps.append(gap)
        dmaxs.append(np.full(chain.size - 1, dmax))
    oo_pred = np.concatenate(preds) if preds else np.empty(0, dtype=np.int64)
    oo_succ = np.concatenate(succs) if succs else np.empty(0, dtype=np.int64)
    oo_gap = np.concatenate(gaps) if gaps else np.empty(0)
    oo_dmax = np.concatenate(dmaxs) if dmaxs else np.empty(0)

    mask = ds.M_O.astype(bool)
    if oo_pred.size:
        oo_inter = (mask[oo_pred] & mask[oo_succ]).sum(axis=1).astype(np.int64)
        oo_bsize = mask[oo_succ].sum(axis=1).astype(np.int64)
    else:
        oo_inter = np.empty(0, dtype=np.int64)
        oo_bsize = np.empty(0, dtype=np.int64)

    # adjacency as edge positions per node; edge_obs is already row-sorted
    starts = np.searchsorted(rows, np.arange(ds.N + 1))
    obs_adj = [np.arange(starts[i], starts[i + 1], dtype=np.int64) for i in range(ds.N)]
    by_cov = np.argsort(cols, kind="stable")
    cov_sorted = cols[by_cov]
    cstarts = np.searchsorted(cov_sorted, np.arange(ds.p + 1))
    cov_adj = [by_cov[cstarts[l]:cstarts[l + 1]] for l in range(ds.p)]

    return HeteroGraph(
        num_obs=ds.N,
        num_cov=ds.p,
        edge_obs=rows.astype(np.int64),
        edge_cov=cols.astype(np.int64),
        edge_val=vals.astype(np.float64),
        oo_pred=oo_pred,
        oo_succ=oo_succ,
        oo_gap=oo_gap,
        oo_dmax=oo_dmax,
        oo_inter=oo_inter,
        oo_bsize=oo_bsize,
        chains=chains,
        obs_subject=ds.subject_of.copy(),
        obs_time=ds.time_of.copy(),
        obs_mask=ds.M_O.astype(bool),
        obs_adj=obs_adj,
        cov_adj=cov_adj,
    )


def observed_covariates(graph: HeteroGraph, obs: int) -> np.ndarray:
    """Covariate indices observed at one observation node."""
    return graph.edge_cov[graph.obs_adj[obs]]


def jaccard_sets(graph: HeteroGraph, obs_pred: int, obs_succ: int) -> tuple[int, int]:
    """(|A ∩ B|, |B|) for predecessor set A and successor set B."""
    a = observed_covariates(graph, obs_pred)
    b = observed_covariates(graph, obs_succ)
    return int(np.intersect1d(a, b).size), int(b.size)


@dataclass
class BatchSample:
    subjects: np.ndarray           # global subject indices, ascending
    rows: np.ndarray               # global row indices of the included observations
    ds: LongitudinalDataset        # induced sub-dataset (local indexing)
    graph: HeteroGraph

    @property
    def size(self) -> int:
        return int(self.subjects.size)


def sample_batch(ds: LongitudinalDataset, s: int, seed: int, phase: int = 0) -> BatchSample:
    """Uniformly sample s whole subjects and build their induced graph."""
    if not (1 <= s <= ds.n):
        raise ContractError(f"sample size {s} outside [1, {ds.n}]")
    rng = seeding.substream(seed, seeding.PHASE, phase)
    subjects = np.sort(rng.choice(ds.n, size=s, replace=False))
    keep = np.isin(ds.subject_of, subjects)
    rows = np.flatnonzero(keep)
    sub = subset_by_subjects(ds, subjects)
    return BatchSample(subjects=subjects, rows=rows, ds=sub, graph=build_graph(sub))
