"""Deterministic random-number streams for embarrassingly parallel simulation.

Every realization of every subsystem gets its own counter-based stream,
keyed by (global seed, realization index, subsystem tag).  Streams built
from the same key are bit-identical no matter which worker draws from
them, which makes Monte Carlo results independent of scheduling and
worker count.
"""

from __future__ import annotations

import numpy as np

# Subsystem tags.  Particle trajectories and Dean-Kawasaki noise for the
# same realization index must be independent, so they use distinct tags.
PARTICLES = 1
DK_NOISE = 2
DK_LIN_NOISE = 3


def stream(seed: int, realization: int, subsystem: int) -> np.random.Generator:
    """Return the generator for one (seed, realization, subsystem) key.

    Backed by Philox, a counter-based bit generator, so stream creation is
    O(1) and keys never collide for distinct index tuples.
    """
    ss = np.random.SeedSequence(seed, spawn_key=(subsystem, realization))
    return np.random.Generator(np.random.Philox(ss))
