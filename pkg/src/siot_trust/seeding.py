"""Deterministic seed derivation shared by every randomized stage."""

from __future__ import annotations

import zlib

import numpy as np


def _key(value: int | str) -> int:
    if isinstance(value, str):
        return zlib.crc32(value.encode("utf-8"))
    if value < 0:
        raise ValueError(f"seed keys must be non-negative, got {value}")
    return value


def derive_seed(seed: int, *keys: int | str) -> int:
    """Derive an independent 64-bit seed from *seed* and a key path.

    The same ``(seed, keys)`` always yields the same value, so a stage seeded
    this way does not depend on how many random draws earlier stages made.

    :param seed: Root seed (non-negative).
    :param keys: Labels naming the consumer, e.g. ``("kmeans", 3)``.
    :return: A non-negative integer usable with :func:`numpy.random.default_rng`.
    """
    sequence = np.random.SeedSequence([_key(seed), *(_key(key) for key in keys)])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def spawn_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    """Return *count* independent child sequences of *seed*, in a fixed order."""
    return np.random.SeedSequence(_key(seed)).spawn(count)
