"""Deterministic 64-bit seed derivation for independent substreams.

Every randomized operation draws from a substream keyed by the global seed
plus a string path (participant id, purpose tag, day index...). Adding or
removing participants therefore never perturbs anyone else's draws, and
results are independent of iteration order and worker count.

Mixing recipe (stable across runs and platforms):
    state = splitmix64(global_seed)
    for key in keys: state = splitmix64(state XOR fnv1a64(utf8(key)))
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One SplitMix64 scrambling step (the standard 64-bit finalizer)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def fnv1a64(text: str) -> int:
    """FNV-1a 64-bit hash of the UTF-8 encoding of `text`."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def substream_seed(global_seed: int, *keys: object) -> int:
    """Derive the 64-bit seed of the substream addressed by `keys`."""
    state = splitmix64(global_seed & _MASK64)
    for key in keys:
        state = splitmix64(state ^ fnv1a64(str(key)))
    return state


def substream_rng(global_seed: int, *keys: object) -> np.random.Generator:
    """PCG64 generator seeded from the addressed substream."""
    return np.random.Generator(np.random.PCG64(substream_seed(global_seed, *keys)))
