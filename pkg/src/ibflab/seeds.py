"""Deterministic per-replica seed derivation.

The mixing function is SplitMix64 applied to ``master + (index + 1) * GOLDEN``
with all arithmetic modulo 2**64::

    z = (master + (index + 1) * 0x9E3779B97F4A7C15) mod 2**64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

For a fixed master seed the map ``index -> z`` is a bijection on 64-bit
integers (the finalizer is invertible), so distinct indices never collide.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB


def _finalize(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, replica_index: int) -> int:
    """64-bit stream seed for replica ``replica_index`` of ``master_seed``."""
    if replica_index < 0:
        raise ValueError("replica_index must be nonnegative")
    return _finalize((int(master_seed) + (int(replica_index) + 1) * GOLDEN) & MASK64)


def derive_seeds(master_seed: int, indices) -> np.ndarray:
    """Vectorised :func:`derive_seed` over an integer array (uint64 result)."""
    idx = np.asarray(indices, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(int(master_seed) & MASK64) + (idx + np.uint64(1)) * np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
        return z ^ (z >> np.uint64(31))


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator from an integer seed; generators pass through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(int(seed)))


def replica_rng(master_seed: int, replica_index: int) -> np.random.Generator:
    return make_rng(derive_seed(master_seed, replica_index))
