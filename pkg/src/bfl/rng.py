"""Seed derivation for reproducible simulation runs.

Every stochastic choice in the simulator draws from its own stream, derived
from the single master seed plus an integer purpose key (and, where needed,
round and client indices).  Streams are independent by construction, so
enabling or disabling one consumer (say, the update filter) never shifts the
randomness seen by any other consumer.
"""

from __future__ import annotations

import numpy as np

# Purpose keys for the per-stream split.  Values are arbitrary but frozen:
# changing them changes every run keyed off a given master seed.
MODEL_INIT = 0
PARTITION = 1
SAMPLING = 2
CLIENT_TRAIN = 3
ATTACK = 4
GEN_INIT = 5
GEN_TRAIN = 6
SYNTH = 7
DATASET = 8
SPLIT = 9


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Return a counter-keyed generator for one purpose.

    The (purpose, round, client, ...) tuple acts as the counter: equal keys
    give bit-identical streams, distinct keys give independent ones.
    """
    seq = np.random.SeedSequence(master_seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.Philox(seq))


def subseed(master_seed: int, *key: int) -> int:
    """Derive a plain integer seed for APIs that take one."""
    seq = np.random.SeedSequence(master_seed, spawn_key=tuple(key))
    return int(seq.generate_state(1, np.uint64)[0])
