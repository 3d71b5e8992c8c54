"""Disjoint random streams from a master seed.

Each task index gets its own counter-based Philox generator keyed by
``SeedSequence(master_seed, spawn_key=(index,))``, so streams never overlap
and a task's stream does not depend on how many other tasks exist.
"""

import numpy as np


def stream(master_seed, index):
    ss = np.random.SeedSequence(master_seed, spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def streams(master_seed, n):
    return [stream(master_seed, i) for i in range(n)]


def as_generator(rng):
    """Accept a Generator, an int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
