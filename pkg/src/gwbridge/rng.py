"""Deterministic splittable RNG streams.

Every experiment cell gets its own counter-based Philox stream derived from
(master_seed, *path), so results are independent of execution order and
worker count, and coupled walks can share one stream per replica.
"""

from __future__ import annotations

import numpy as np


def stream(master_seed: int, *path: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def derived_seed(master_seed: int, *path: int) -> int:
    """A stable 64-bit label for the (master_seed, *path) stream."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(2, dtype=np.uint64)[0])
