"""Seed derivation for reproducible, worker-count-independent Monte Carlo."""

from __future__ import annotations

import zlib
from typing import Iterator, Union

import numpy as np

# Trials are simulated in fixed-size chunks, each with its own stream, so the
# result never depends on how chunks are distributed over workers.
CHUNK = 1 << 14

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]


def tag(name: str) -> int:
    """Stable integer id for a string (experiment names, curve labels)."""
    return zlib.crc32(name.encode())


def derive(seed: SeedLike, *key: int) -> np.random.SeedSequence:
    """Child seed sequence addressed by ``key`` below ``seed``."""
    if isinstance(seed, np.random.Generator):
        raise TypeError("a Generator cannot be re-derived; pass an int or SeedSequence")
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + key)
    return np.random.SeedSequence(seed, spawn_key=key)


def chunked(seed: SeedLike, trials: int) -> Iterator[tuple[np.random.Generator, int]]:
    """Yield (generator, size) pairs covering ``trials``.

    A ``Generator`` is used as-is for the whole run.
    """
    if isinstance(seed, np.random.Generator):
        yield seed, trials
        return
    for i, start in enumerate(range(0, trials, CHUNK)):
        yield np.random.default_rng(derive(seed, i)), min(CHUNK, trials - start)
