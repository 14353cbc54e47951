"""Named RNG substreams.

Every random decision in the pipeline draws from its own PCG64 stream,
keyed by (stream tag, user seed, extra indices). Streams are therefore
independent of generation order, which keeps parallel runs byte-identical
to sequential ones.
"""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

SeedLike = Union[int, Sequence[int]]

SIGNAL_STREAM = 1
SPLIT_STREAM = 2
SUBSET_STREAM = 3
FOREST_STREAM = 4


def as_key(seed: SeedLike) -> tuple[int, ...]:
    """Normalize a seed (int or sequence of ints) to a tuple of non-negative ints."""
    if isinstance(seed, (int, np.integer)):
        key = (int(seed),)
    else:
        key = tuple(int(s) for s in seed)
    if not key:
        raise ValueError("seed must not be empty")
    if any(s < 0 for s in key):
        raise ValueError("seed components must be non-negative")
    return key


def substream(tag: int, seed: SeedLike, *extra: int) -> np.random.Generator:
    """Generator for the substream (tag, seed..., extra...)."""
    return np.random.default_rng((tag, *as_key(seed), *extra))
