"""Seeded random streams.

One root seed per run; each module draws from its own child stream so that
adding randomness to one module never shifts another module's draws.
"""

from __future__ import annotations

import zlib

import numpy as np

DEFAULT_SEED = 42


def stream(seed: int | None, name: str) -> np.random.Generator:
    """Independent generator for ``name`` derived from the run seed."""
    if seed is None:
        seed = DEFAULT_SEED
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))
