"""Reproducible, splittable random streams.

Every stochastic operation in the package takes an explicit numpy Generator;
there is no global RNG.  Parallel work derives per-task streams from
(master_seed, index) through SeedSequence's spawn-key mechanism, which is the
documented 64-bit mixing function behind the scheduling-invariance contract
of the tours module: the stream for task i depends only on the master seed
and i, never on which worker runs it.
"""

import numpy as np


def stream(seed):
    """Return a fresh Generator seeded with ``seed``."""
    return np.random.default_rng(seed)


def substream(master_seed, *index):
    """Return the Generator for subtask ``index`` under ``master_seed``.

    Deterministic in (master_seed, index) alone.  Distinct indices yield
    statistically independent streams.
    """
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(index)))
