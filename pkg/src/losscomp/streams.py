"""Counter-based random streams.

Sample ``i`` of a stream always reads Philox block ``i`` (four 64-bit
words), so the values do not depend on how the index range is split into
chunks or across workers.
"""
from __future__ import annotations

from collections.abc import Sequence

import numpy as np

_CHUNK = 1 << 16
_TO_UNIT = 2.0**-53


def derive_key(seed) -> np.ndarray:
    """Two-word Philox key from an integer seed or a sequence of integers."""
    if isinstance(seed, np.ndarray) and seed.dtype == np.uint64 and seed.shape == (2,):
        return seed
    entropy = list(seed) if isinstance(seed, Sequence) else int(seed)
    return np.random.SeedSequence(entropy).generate_state(2, np.uint64)


def raw_blocks(key, start: int, count: int) -> np.ndarray:
    """Blocks ``start .. start+count-1`` as a ``(count, 4)`` uint64 array."""
    out = np.empty((count, 4), dtype=np.uint64)
    for lo in range(0, count, _CHUNK):
        n = min(_CHUNK, count - lo)
        bg = np.random.Philox(key=key, counter=[start + lo, 0, 0, 0])
        out[lo:lo + n] = bg.random_raw(4 * n).reshape(n, 4)
    return out


def uniforms(key, start: int, count: int) -> np.ndarray:
    """Doubles strictly inside (0, 1), shape ``(count, 4)``."""
    raw = raw_blocks(key, start, count)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TO_UNIT


def generator(seed) -> np.random.Generator:
    """Ordinary sequential generator on the same key derivation."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed)))
