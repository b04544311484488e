"""Purpose-separated random streams.

Every consumer (data generation, weight init, dropout masks, minibatch
order) draws from its own counter-based Philox stream derived from the
user seed, so adding draws in one place never shifts another.
"""

import numpy as np

_PURPOSES = {"data": 1, "init": 2, "dropout": 3, "shuffle": 4, "mc": 5, "world": 6}


def stream(seed: int, purpose: str) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_PURPOSES[purpose],))
    return np.random.Generator(np.random.Philox(ss))
