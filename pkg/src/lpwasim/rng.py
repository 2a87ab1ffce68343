"""Seeded random streams.

Two flavours are used.  Bulk draws (deployment) come from numpy generators
spawned off a :class:`numpy.random.SeedSequence` keyed by ``(seed, stream,
...)``.  Draws that happen inside the event loop (fading, backoff, slot
choice, arrival gaps) are counter-based: a splitmix64 hash of the identifying
integers.  A keyed draw depends only on its key, never on the order in which
events happen to be processed, so changing one population leaves another
population's draws untouched.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1

# stream labels
DEPLOY = 1
TRAFFIC = 2
GW_FADING = 3
SENSE_FADING = 4
BACKOFF = 5
SLOT = 6

_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV53 = 2.0 ** -53


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent numpy generator for the stream ``(seed, *key)``."""
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def mix(z: int) -> int:
    z = (z + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def key_hash(seed: int, *key: int) -> int:
    h = mix(seed & MASK64)
    for k in key:
        h = mix(h ^ (k & MASK64))
    return h


def keyed_uniform(seed: int, *key: int) -> float:
    """Uniform on the open interval (0, 1)."""
    return ((key_hash(seed, *key) >> 11) + 0.5) * _INV53


def keyed_exponential(seed: int, *key: int) -> float:
    """Unit-mean exponential variate."""
    return -math.log(keyed_uniform(seed, *key))


_U_GOLDEN = np.uint64(_GOLDEN)
_U_M1 = np.uint64(_M1)
_U_M2 = np.uint64(_M2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


def mix_array(z: np.ndarray) -> np.ndarray:
    """Vectorised :func:`mix` over a uint64 array (wrapping arithmetic)."""
    z = z + _U_GOLDEN
    z = (z ^ (z >> _S30)) * _U_M1
    z = (z ^ (z >> _S27)) * _U_M2
    return z ^ (z >> _S31)


def exponential_from_hash(h: np.ndarray) -> np.ndarray:
    u = ((h >> _S11).astype(np.float64) + 0.5) * _INV53
    return -np.log(u)
