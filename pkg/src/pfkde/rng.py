"""Seeded random streams.

All randomized routines take an explicit :class:`numpy.random.Generator`.
Streams are Philox (counter based) generators keyed by a
:class:`numpy.random.SeedSequence`, so a tuple such as ``(base_seed, n, r)``
names an independent, reproducible stream.
"""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

Seed = Union[int, Sequence[int], np.random.SeedSequence]


def _entropy(seed) -> list[int]:
    """Flatten an int or nested int tuple; ``((a, b), c)`` names the same stream as ``(a, b, c)``."""
    if np.isscalar(seed):
        out = [int(seed)]
    else:
        out = [v for s in seed for v in _entropy(s)]
    if any(s < 0 for s in out):
        raise ValueError(f"seed entries must be non-negative, got {out}")
    return out


def make_rng(seed: Seed) -> np.random.Generator:
    """Return a Philox generator for ``seed`` (int, int tuple or SeedSequence)."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(_entropy(seed))
    return np.random.Generator(np.random.Philox(seed))


def spawn(seed: Seed, count: int) -> list[np.random.Generator]:
    """Disjoint child streams, e.g. one per worker."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(_entropy(seed))
    return [np.random.Generator(np.random.Philox(child)) for child in ss.spawn(count)]
