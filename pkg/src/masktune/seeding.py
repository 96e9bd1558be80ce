"""Root-seed expansion.

Every random draw in a run descends from one root seed through a named
purpose stream, so any component (data generation, parameter init, masking,
shuffling, dropout, analysis sampling) can be reproduced in isolation.
Streams are numpy SeedSequences keyed by (purpose id, *indices); per-seed
sweep runs pass their seed index so parallel seeds never share a stream.
"""

import numpy as np

PURPOSES = {
    "data": 0,
    "init": 1,
    "masking": 2,
    "shuffle": 3,
    "dropout": 4,
    "analysis": 5,
    "augment": 6,
}


def seed_for(root, purpose, *indices):
    if purpose not in PURPOSES:
        raise ValueError(f"unknown seed purpose {purpose!r}")
    return np.random.SeedSequence(entropy=root,
                                  spawn_key=(PURPOSES[purpose], *indices))


def rng_for(root, purpose, *indices):
    return np.random.default_rng(seed_for(root, purpose, *indices))
