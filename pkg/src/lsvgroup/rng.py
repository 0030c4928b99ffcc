"""Counter-based random streams keyed by (master seed, trajectory index).

Each trajectory owns a Philox generator whose counter's high word is the
trajectory index, so streams are disjoint and independent of scheduling.
The compiled kernels draw refresh bits from a SplitMix64 sequence keyed
by a 64-bit word taken from that stream.
"""
from __future__ import annotations

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1


def stream(seed: int, index: int) -> np.random.Generator:
    if seed is None:
        raise ValueError("a master seed is required")
    key = [int(seed) & MASK64, (int(seed) >> 64) & MASK64]
    counter = [0, 0, 0, int(index) & MASK64]
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def open_unit(rng: np.random.Generator) -> float:
    """Uniform draw from the open interval (0, 1)."""
    while True:
        u = rng.random()
        if 0.0 < u < 1.0:
            return u


@njit(cache=True, nogil=True)
def splitmix64(key, counter):
    z = key + counter * np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))
