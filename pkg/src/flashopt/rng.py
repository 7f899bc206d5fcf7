"""Seeded random streams.

Every run draws from a Philox-4x64-10 counter-based generator whose 128-bit
key is ``seed + (stream << 64)`` and whose counter starts at zero.  Distinct
``stream`` values give independent sub-streams for the same seed, so a seed
matrix can be executed in any order (or in parallel) without changing results.
"""

from __future__ import annotations

import numpy as np

MAX_SEED = 2**64


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    if not 0 <= seed < MAX_SEED or not 0 <= stream < MAX_SEED:
        raise ValueError(f"seed and stream must lie in [0, 2**64), got {seed}, {stream}")
    return np.random.Generator(np.random.Philox(key=int(seed) + (int(stream) << 64)))


def child_rng(rng: np.random.Generator) -> np.random.Generator:
    """Derive an independent generator from the next draw of ``rng``."""
    seed, stream = (int(s) for s in rng.integers(0, MAX_SEED, size=2, dtype=np.uint64))
    return make_rng(seed, stream)
