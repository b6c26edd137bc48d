"""Deterministic, purpose-tagged random substreams.

Every consumer derives its generator from (seed, tag, ...) so that
independent stages never share a stream and per-subject generation is
order-independent (parallel and serial runs agree).
"""

from __future__ import annotations

import numpy as np

COVARIATES = 1
RESPONSE_IDX = 2
RESPONSE_NOISE = 3
SPLIT = 4
MASK = 5
PARAMS = 6
PHASE = 7
BASELINE = 8
SNAPSHOT = 9


def substream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)
