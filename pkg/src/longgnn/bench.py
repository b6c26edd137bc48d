"""Scalability benchmark: fixed sample size, growing observation count.

Each dataset size runs in a fresh spawned process so resident-memory high
water marks and allocation traces never bleed between sizes. Per-epoch wall
time and the training-scoped allocation peak stay flat as N grows because
every epoch touches only the sampled subjects' graph; full-graph
construction is timed separately since it does scale with N.
"""

from __future__ import annotations

import dataclasses
import time
import tracemalloc
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np

from .data import apply_missingness
from .errors import ContractError
from .graph import build_graph
from .reports import PeakRssSampler
from .synth import SimConfig, simulate
from .train import TrainConfig, fit


@dataclass(frozen=True)
class BenchConfig:
    obs_sizes: tuple[int, ...] = (5_000, 50_000, 500_000)
    obs_per_subject: int = 10
    p: int = 50
    window: int = 3
    missing_x: float = 0.3
    missing_y: float = 0.3
    sample_size: int = 200
    phases: int = 2
    epochs: int = 30
    embed_dim: int = 16
    bipartite_layers: int = 3
    temporal_layers: int = 2
    seed: int = 0

    def __post_init__(self):
        sizes = list(self.obs_sizes)
        if sizes != sorted(sizes) or len(set(sizes)) != len(sizes):
            raise ContractError("obs_sizes must be strictly increasing")
        if any(s < self.obs_per_subject for s in sizes):
            raise ContractError("each obs size needs at least one subject")


def _bench_one_size(cfg: BenchConfig, n_obs: int) -> dict:
    """Worker body: generate data, time the full-graph build, train, measure."""
    n_subjects = max(2, n_obs // cfg.obs_per_subject)
    sim = SimConfig(
        n_subjects=n_subjects,
        obs_per_subject=(cfg.obs_per_subject, cfg.obs_per_subject),
        p=cfg.p,
        window=cfg.window,
        seed=cfg.seed,
    )
    t0 = time.perf_counter()
    ds, _ = simulate(sim)
    ds = apply_missingness(ds, cfg.missing_x, cfg.missing_y, cfg.seed)
    gen_seconds = time.perf_counter() - t0

    t0 = time.perf_counter()
    full_graph = build_graph(ds)
    graph_build_seconds = time.perf_counter() - t0
    edge_count = full_graph.num_bipartite_edges
    chain_count = full_graph.num_chain_edges
    del full_graph

    train_cfg = TrainConfig(
        phases=cfg.phases,
        sample_size=cfg.sample_size,
        epochs=cfg.epochs,
        embed_dim=cfg.embed_dim,
        bipartite_layers=cfg.bipartite_layers,
        temporal_layers=cfg.temporal_layers,
        seed=cfg.seed,
        report_train_rmse=False,   # full-train inference would scale with N
    )
    with PeakRssSampler() as sampler:
        tracemalloc.start()
        base_current, _ = tracemalloc.get_traced_memory()
        _, _, report = fit(ds, train_cfg)
        _, traced_peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
    secs = report.epoch_seconds[2:] if len(report.epoch_seconds) > 4 else report.epoch_seconds
    return {
        "n_obs": int(ds.N),
        "n_subjects": int(ds.n),
        "bipartite_edges": int(edge_count),
        "chain_edges": int(chain_count),
        "parameter_count": int(report.parameter_count),
        "sample_size": int(min(cfg.sample_size, ds.n)),
        "measurements": {
            "gen_seconds": gen_seconds,
            "graph_build_seconds": graph_build_seconds,
            "mean_epoch_seconds": float(np.mean(secs)),
            "median_epoch_seconds": float(np.median(secs)),
            "train_alloc_peak_bytes": int(traced_peak - base_current),
            "peak_rss_bytes": int(sampler.peak),
        },
    }


def _worker(conn, cfg_dict: dict, n_obs: int) -> None:
    try:
        result = _bench_one_size(BenchConfig(**cfg_dict), n_obs)
        conn.send(("ok", result))
    except MemoryError:
        conn.send(("oom", {"n_obs": n_obs, "failed": True, "reason": "insufficient memory"}))
    except Exception as e:  # noqa: BLE001 - report, do not hang the parent
        conn.send(("error", {"n_obs": n_obs, "failed": True, "reason": repr(e)}))
    finally:
        conn.close()


def run_scalability(cfg: BenchConfig) -> tuple[dict, dict]:
    """Per-size rows plus flatness ratios; returns (deterministic, measured)."""
    ctx = get_context("spawn")
    rows, measured_rows = [], []
    cfg_dict = dataclasses.asdict(cfg)
    for n_obs in cfg.obs_sizes:
        parent, child = ctx.Pipe()
        proc = ctx.Process(target=_worker, args=(child, cfg_dict, int(n_obs)))
        proc.start()
        status, payload = parent.recv() if parent.poll(3600) else ("error", {"n_obs": n_obs, "failed": True, "reason": "timeout"})
        proc.join()
        if status == "ok":
            meas = payload.pop("measurements")
            rows.append(payload)
            measured_rows.append({"n_obs": payload["n_obs"], **meas})
        else:
            rows.append({k: v for k, v in payload.items() if k != "reason"})
            measured_rows.append(payload)

    deterministic = {
        "obs_sizes": [int(s) for s in cfg.obs_sizes],
        "rows": rows,
        "partial": any(r.get("failed") for r in rows),
    }
    measured: dict = {"rows": measured_rows}
    complete = [m for m in measured_rows if not m.get("failed")]
    if len(complete) >= 2:
        first, last = complete[0], complete[-1]
        measured["epoch_time_ratio_last_vs_first"] = (
            last["mean_epoch_seconds"] / first["mean_epoch_seconds"])
        measured["train_alloc_ratio_last_vs_first"] = (
            last["train_alloc_peak_bytes"] / max(first["train_alloc_peak_bytes"], 1))
        measured["rss_ratio_last_vs_first"] = (
            last["peak_rss_bytes"] / max(first["peak_rss_bytes"], 1))
    return deterministic, measured
