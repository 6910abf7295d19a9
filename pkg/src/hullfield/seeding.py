"""Deterministic RNG streams for every pipeline stage.

Each stage derives its generator from (seed, stage, *key) through a
SeedSequence spawn key, so stages are order-independent: re-running one stage
in isolation or in a different order reproduces identical draws. Component
streams are keyed by the component's path in the decomposition tree, not by
processing order, which keeps sweeps over epsilon byte-stable.
"""

import numpy as np

STAGE_SURFACE = 1
STAGE_TRIPLETS = 2
STAGE_FEATURES = 3
STAGE_DECOMP = 4
STAGE_METRICS = 5


def stage_rng(seed, *key):
    ss = np.random.SeedSequence(int(seed),
                                spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)
