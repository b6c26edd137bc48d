"""Inductive graph network for longitudinal tabular data with missing entries."""

__version__ = "0.1.0"

from . import baselines, bench, data, engine, experiment, graph, heads, layers, optim, synth, train  # noqa: F401
from .data import LongitudinalDataset, Scaler, SplitSpec  # noqa: F401
from .engine import Tensor, backward, no_grad  # noqa: F401
from .graph import BatchSample, HeteroGraph, build_graph, sample_batch  # noqa: F401
from .optim import Adam  # noqa: F401
from .synth import SimConfig  # noqa: F401
from .train import TrainConfig, evaluate_rmse, fit, predict  # noqa: F401
