"""Deterministic random streams derived from a single root seed.

Every stochastic step in the pipeline draws from its own named stream,
e.g. ``stream(seed, "round3/mine")``. The name is hashed (crc32) into the
seed material, so the same (seed, name) pair always reproduces the same
draws and a resumed run can rebuild exactly the streams it needs without
replaying earlier ones.
"""

from __future__ import annotations

import zlib

import numpy as np


def seed_sequence(seed: int, name: str) -> np.random.SeedSequence:
    """Seed material for the named stream under a root seed."""
    # Mask keeps the entropy non-negative, as SeedSequence requires.
    root = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.random.SeedSequence(entropy=(root, zlib.crc32(name.encode("utf-8"))))


def stream(seed: int, name: str) -> np.random.Generator:
    """Generator for the named stream; same (seed, name) -> same draws."""
    return np.random.default_rng(seed_sequence(seed, name))


def derive_seed(seed: int, name: str) -> int:
    """Collapse a named stream into a plain integer seed."""
    return int(seed_sequence(seed, name).generate_state(1, dtype=np.uint64)[0])
