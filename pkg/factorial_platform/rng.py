"""Reproducible random streams for population permutation and assignment draws."""

from typing import Tuple

import numpy as np

from .errors import InputError

# Substream tags keep permutation and assignment streams disjoint for one seed.
PERMUTE_STREAM = 0
ASSIGN_STREAM = 1


def make_generator(seed: int, *stream: int) -> np.random.Generator:
    """
    Counter-based generator for the substream ``stream`` of ``seed``.

    The same (seed, stream) always yields the same sequence, regardless of
    which thread or process asks for it.

    Example:
        rng = make_generator(20240101, ASSIGN_STREAM, population, draw)
    """
    if seed < 0:
        raise InputError(f"Seed must be non-negative, got {seed}")
    key: Tuple[int, ...] = tuple(int(part) for part in stream)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))
