"""Deterministic random substreams.

Every random draw in the lab comes from a generator derived from a master
seed plus an integer key path, so results do not depend on evaluation order
or on how many workers run in parallel.
"""
from __future__ import annotations

import numpy as np

SeedLike = int | np.random.Generator | np.random.SeedSequence | None


def substream(master: int, *key: int) -> np.random.Generator:
    """Generator keyed by ``(master, *key)``; same key gives the same stream."""
    if master < 0:
        raise ValueError("master seed must be nonnegative")
    seq = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(seq)


def as_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
