"""Longitudinal observation tables: ingest, masking, splits, scaling.

A dataset is an N x p observation table with a response column, binary
observedness masks, and per-row subject/time labels. Rows are stored
grouped by subject with strictly increasing time stamps inside each group.
Datasets are immutable by convention: every operation returns a new one.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from . import seeding
from .errors import ContractError, FormatError


@dataclass
class LongitudinalDataset:
    D: np.ndarray                  # (N,p) float64, zero where unobserved
    Y: np.ndarray                  # (N,)
    M_O: np.ndarray                # (N,p) uint8, 1 = observed
    M_Y: np.ndarray                # (N,)
    subject_of: np.ndarray         # (N,) int, contiguous blocks 0..n-1
    time_of: np.ndarray            # (N,) int
    subject_ids: list[str] = field(default_factory=list)
    D_true: np.ndarray | None = None    # shadow ground truth for evaluation
    Y_true: np.ndarray | None = None

    def __post_init__(self):
        self.validate()

    # -- derived quantities ---------------------------------------------

    @property
    def N(self) -> int:
        return self.D.shape[0]

    @property
    def p(self) -> int:
        return self.D.shape[1]

    @property
    def n(self) -> int:
        return len(self.subject_ids)

    @property
    def counts(self) -> np.ndarray:
        """Observations per subject, in subject order."""
        return np.bincount(self.subject_of, minlength=self.n)

    def subject_slices(self) -> list[slice]:
        bounds = np.concatenate([[0], np.cumsum(self.counts)])
        return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]

    def fully_observed(self) -> bool:
        return bool(self.M_O.all() and self.M_Y.all())

    def validate(self) -> None:
        N, p = self.D.shape
        if self.Y.shape != (N,) or self.M_O.shape != (N, p) or self.M_Y.shape != (N,):
            raise ContractError("dataset arrays disagree on N or p")
        if self.subject_of.shape != (N,) or self.time_of.shape != (N,):
            raise ContractError("subject/time labels must have one entry per row")
        if N:
            if self.subject_of.max() >= len(self.subject_ids):
                raise ContractError("subject index out of range")
            # contiguous blocks in subject order
            changes = np.flatnonzero(np.diff(self.subject_of) != 0)
            blocks = self.subject_of[np.concatenate([[0], changes + 1])]
            if len(set(blocks.tolist())) != len(blocks) or not np.all(np.diff(blocks) > 0):
                raise ContractError("rows must be grouped by subject in ascending order")
            for sl in self.subject_slices():
                t = self.time_of[sl]
                if t.size > 1 and not np.all(np.diff(t) > 0):
                    raise ContractError("time stamps must strictly increase within a subject")
        if self.D_true is not None and self.D_true.shape != (N, p):
            raise ContractError("shadow covariate table shape mismatch")
        if self.Y_true is not None and self.Y_true.shape != (N,):
            raise ContractError("shadow response shape mismatch")


@dataclass(frozen=True)
class SplitSpec:
    test_ratio: float
    missing_x: float = 0.0
    missing_y: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("test_ratio", "missing_x", "missing_y"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ContractError(f"{name}={v} outside [0, 1)")


@dataclass
class Scaler:
    """Per-covariate min/max fitted on observed training entries."""

    mins: np.ndarray
    maxs: np.ndarray
    empty: np.ndarray   # bool per covariate: no observed training entry

    def __post_init__(self):
        if np.any(self.maxs[~self.empty] < self.mins[~self.empty]):
            raise ContractError("scaler with max < min")

    def _denom(self) -> np.ndarray:
        d = self.maxs - self.mins
        d[d == 0.0] = 1.0
        d[self.empty] = 1.0
        return d

    def transform_matrix(self, X: np.ndarray, clip: bool = False) -> np.ndarray:
        mins = np.where(self.empty, 0.0, self.mins)
        out = (X - mins) / self._denom()
        out[:, self.empty] = X[:, self.empty]
        if clip:
            out[:, ~self.empty] = np.clip(out[:, ~self.empty], 0.0, 1.0)
        return out

    def inverse_matrix(self, X: np.ndarray) -> np.ndarray:
        mins = np.where(self.empty, 0.0, self.mins)
        out = X * self._denom() + mins
        out[:, self.empty] = X[:, self.empty]
        return out

    def transform_dataset(self, ds: LongitudinalDataset, clip: bool = False) -> LongitudinalDataset:
        D = np.where(ds.M_O == 1, self.transform_matrix(ds.D, clip=clip), 0.0)
        D_true = None if ds.D_true is None else self.transform_matrix(ds.D_true, clip=clip)
        return replace(ds, D=D, D_true=D_true)


CSV_SUBJECT, CSV_TIME, CSV_Y = "subject_id", "time", "y"


def _covariate_names(p: int) -> list[str]:
    return [f"x{i}" for i in range(1, p + 1)]


def load_csv(path) -> LongitudinalDataset:
    """Read the observation-table schema; empty cells become missing entries."""
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    cols = list(df.columns)
    if len(cols) < 3 or cols[0] != CSV_SUBJECT or cols[1] != CSV_TIME or cols[-1] != CSV_Y:
        raise FormatError(f"unexpected header {cols[:3]}...{cols[-1:]}; want subject_id,time,x1..xp,y")
    p = len(cols) - 3
    if cols[2:-1] != _covariate_names(p):
        raise FormatError("covariate columns must be named x1..xp in order")

    def numeric(frame_col, name):
        # float() is correctly rounded, so repr-written values round-trip exactly
        out = np.empty(len(frame_col), dtype=np.float64)
        for i, s in enumerate(frame_col.tolist()):
            if s == "":
                out[i] = np.nan
            else:
                try:
                    out[i] = float(s)
                except ValueError:
                    raise FormatError(f"non-numeric cell {s!r} in column {name}") from None
        return out

    times = numeric(df[CSV_TIME], CSV_TIME)
    if np.isnan(times).any():
        raise FormatError("blank time stamp")
    if not np.all(times == np.round(times)):
        raise FormatError("time stamps must be integers")
    X = np.column_stack([numeric(df[c], c) for c in cols[2:-1]]) if p else np.zeros((len(df), 0))
    y = numeric(df[CSV_Y], CSV_Y)

    subjects_raw = df[CSV_SUBJECT].tolist()
    order_of: dict[str, int] = {}
    for s in subjects_raw:
        if s not in order_of:
            order_of[s] = len(order_of)
    subject_ids = list(order_of)
    subj_idx = np.array([order_of[s] for s in subjects_raw], dtype=np.int64)

    # group by first-appearance subject order, sort by time inside a subject
    order = np.lexsort((times, subj_idx))
    subj_idx, times, X, y = subj_idx[order], times[order], X[order], y[order]
    pairs = np.column_stack([subj_idx, times])
    if len(pairs) and len(np.unique(pairs, axis=0)) != len(pairs):
        raise FormatError("duplicate (subject, time) pair")

    M_O = (~np.isnan(X)).astype(np.uint8)
    M_Y = (~np.isnan(y)).astype(np.uint8)
    return LongitudinalDataset(
        D=np.where(np.isnan(X), 0.0, X),
        Y=np.where(np.isnan(y), 0.0, y),
        M_O=M_O,
        M_Y=M_Y,
        subject_of=subj_idx,
        time_of=times.astype(np.int64),
        subject_ids=subject_ids,
    )


def write_csv(ds: LongitudinalDataset, path) -> None:
    """Emit the schema with masked entries as empty fields."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([CSV_SUBJECT, CSV_TIME] + _covariate_names(ds.p) + [CSV_Y])
        for i in range(ds.N):
            row = [ds.subject_ids[ds.subject_of[i]], int(ds.time_of[i])]
            row += [repr(float(v)) if m else "" for v, m in zip(ds.D[i], ds.M_O[i])]
            row.append(repr(float(ds.Y[i])) if ds.M_Y[i] else "")
            w.writerow(row)


def attach_truth(ds: LongitudinalDataset, truth: LongitudinalDataset) -> LongitudinalDataset:
    """Align a fully observed shadow table with a masked dataset."""
    if truth.N != ds.N or truth.p != ds.p:
        raise ContractError("shadow table size mismatch")
    if truth.subject_ids != ds.subject_ids or not np.array_equal(truth.time_of, ds.time_of):
        raise ContractError("shadow table rows do not line up with the dataset")
    return replace(ds, D_true=truth.D.copy(), Y_true=truth.Y.copy())


def subset_by_subjects(ds: LongitudinalDataset, subject_indices) -> LongitudinalDataset:
    """New dataset holding only the given subjects (ascending order)."""
    subject_indices = np.asarray(sorted(int(i) for i in subject_indices), dtype=np.int64)
    keep = np.isin(ds.subject_of, subject_indices)
    remap = {int(s): j for j, s in enumerate(subject_indices)}
    return LongitudinalDataset(
        D=ds.D[keep].copy(),
        Y=ds.Y[keep].copy(),
        M_O=ds.M_O[keep].copy(),
        M_Y=ds.M_Y[keep].copy(),
        subject_of=np.array([remap[int(s)] for s in ds.subject_of[keep]], dtype=np.int64),
        time_of=ds.time_of[keep].copy(),
        subject_ids=[ds.subject_ids[int(i)] for i in subject_indices],
        D_true=None if ds.D_true is None else ds.D_true[keep].copy(),
        Y_true=None if ds.Y_true is None else ds.Y_true[keep].copy(),
    )


def split_subjects(ds: LongitudinalDataset, spec: SplitSpec):
    """Subject-level partition into (train, test); ceil(n*r) test subjects."""
    n = ds.n
    if n < 2:
        raise ContractError("need at least 2 subjects to split")
    if not (0.0 < spec.test_ratio < 1.0):
        raise ContractError("test_ratio must lie strictly inside (0, 1)")
    n_test = math.ceil(n * spec.test_ratio)
    if n_test >= n:
        raise ContractError("test ratio leaves no training subjects")
    rng = seeding.substream(spec.seed, seeding.SPLIT)
    test_idx = np.sort(rng.choice(n, size=n_test, replace=False))
    train_idx = np.setdiff1d(np.arange(n), test_idx)
    return subset_by_subjects(ds, train_idx), subset_by_subjects(ds, test_idx)


def apply_missingness(ds: LongitudinalDataset, r_x: float, r_y: float, seed: int,
                      stream: int = 0) -> LongitudinalDataset:
    """Drop entries uniformly at random; ground truth moves to the shadow table.

    Already-missing entries are never resurrected. Distinct streams give
    independent masks under one seed (train vs test splits).
    """
    for name, v in (("r_x", r_x), ("r_y", r_y)):
        if not (0.0 <= v < 1.0):
            raise ContractError(f"{name}={v} outside [0, 1)")
    rng = seeding.substream(seed, seeding.MASK, stream)
    keep_x = rng.random(ds.D.shape) >= r_x
    keep_y = rng.random(ds.N) >= r_y
    M_O = (ds.M_O.astype(bool) & keep_x).astype(np.uint8)
    M_Y = (ds.M_Y.astype(bool) & keep_y).astype(np.uint8)
    D_true = ds.D.copy() if ds.D_true is None else ds.D_true
    Y_true = ds.Y.copy() if ds.Y_true is None else ds.Y_true
    return replace(
        ds,
        D=np.where(M_O == 1, ds.D, 0.0),
        Y=np.where(M_Y == 1, ds.Y, 0.0),
        M_O=M_O,
        M_Y=M_Y,
        D_true=D_true,
        Y_true=Y_true,
    )


def fit_transform_minmax(train: LongitudinalDataset, test: LongitudinalDataset):
    """Scale both splits with min/max fitted on observed training entries.

    Constant covariates map to 0; test values are clipped into [0, 1];
    covariates with no observed training entry pass through untouched.
    """
    if train.p != test.p:
        raise ContractError("train and test disagree on covariate count")
    obs = train.M_O == 1
    counts = obs.sum(axis=0)
    empty = counts == 0
    if empty.any():
        warnings.warn(f"{int(empty.sum())} covariate(s) have no observed training entries; passed through")
    masked_for_min = np.where(obs, train.D, np.inf)
    masked_for_max = np.where(obs, train.D, -np.inf)
    mins = np.where(empty, 0.0, masked_for_min.min(axis=0))
    maxs = np.where(empty, 0.0, masked_for_max.max(axis=0))
    scaler = Scaler(mins=mins, maxs=maxs, empty=empty)
    return scaler.transform_dataset(train), scaler.transform_dataset(test, clip=True), scaler
