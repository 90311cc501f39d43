"""Counter-based random streams.

Every stream is ``Philox`` keyed by ``SeedSequence(root, spawn_key=key)``, so
the stream for a given (root seed, key) pair never depends on how many other
streams were created, in which order, or on which thread.
"""
from __future__ import annotations

import numpy as np

# first spawn-key component, one per consumer
SINGLE = 0
TRIAL = 1
LD_BLOCK = 2
SCHEDULE = 3
SAMPLE = 4


def stream(root: int, *key: int) -> np.random.Generator:
    """Generator for the stream ``key`` under ``root``."""
    if root is None:
        raise ValueError("a root seed is required")
    ss = np.random.SeedSequence(int(root), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
