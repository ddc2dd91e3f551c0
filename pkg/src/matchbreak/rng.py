"""Deterministic randomness helpers.

Every stochastic operation in the package takes an explicit seed or an
already-derived :class:`numpy.random.Generator`. Streams are built on the
counter-based Philox bit generator, and substreams are derived through
``SeedSequence`` spawn keys, so two streams with the same root seed but
different keys are statistically independent and reproducible across runs.
"""

from __future__ import annotations

import zlib

import numpy as np

MAX_SEED = 2**64 - 1

SeedLike = int | np.random.Generator


def _key_to_int(key: int | str) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if isinstance(key, (int, np.integer)):
        k = int(key)
        if k < 0:
            raise ValueError(f"substream key must be nonnegative, got {k}")
        return k
    raise TypeError(f"substream key must be int or str, got {type(key).__name__}")


def make_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Create a Philox generator for ``seed``, optionally scoped by ``keys``."""
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    ss = np.random.SeedSequence(seed, spawn_key=tuple(_key_to_int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(seed: SeedLike, *keys: int | str) -> np.random.Generator:
    """Accept either a seed or an existing generator.

    Passing a generator hands over its state as-is; substream keys are only
    meaningful together with an integer seed.
    """
    if isinstance(seed, np.random.Generator):
        if keys:
            raise ValueError("substream keys cannot be combined with a Generator")
        return seed
    return make_rng(seed, *keys)


def random_unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Draw a direction uniformly from the unit sphere in ``dim`` dimensions."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    while True:
        v = rng.standard_normal(dim)
        norm = np.linalg.norm(v)
        if norm > 0.0:  # a zero draw has probability zero but would divide by zero
            return v / norm
