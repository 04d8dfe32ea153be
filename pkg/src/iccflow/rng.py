"""Per-purpose random streams built on the counter-based Philox generator.

Every consumer asks for a stream by name (and optional integer indices), so
changing how many draws one purpose takes never shifts another purpose's
numbers.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _purpose_words(purpose: str) -> tuple[int, ...]:
    digest = hashlib.sha256(purpose.encode()).digest()
    return tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))


def seed_sequence(seed: int, purpose: str, *indices: int) -> np.random.SeedSequence:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return np.random.SeedSequence(entropy=int(seed), spawn_key=_purpose_words(purpose) + tuple(int(i) for i in indices))


def stream(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Independent Philox generator for ``(seed, purpose, *indices)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, purpose, *indices)))


def derived_seed(seed: int, purpose: str, *indices: int) -> int:
    """A 63-bit integer seed for APIs that take plain integers."""
    return int(seed_sequence(seed, purpose, *indices).generate_state(2, np.uint64)[0] >> np.uint64(1))
