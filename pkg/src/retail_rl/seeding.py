"""Stateless seed derivation.

``SeedSequence.spawn`` advances a counter on the parent, so spawning twice
from the same object yields different children. These helpers derive
children from the parent's entropy and key alone.
"""

from __future__ import annotations

import numpy as np


def as_seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def children(seed, n: int) -> list:
    ss = as_seed_sequence(seed)
    return [np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (i,)) for i in range(n)]
