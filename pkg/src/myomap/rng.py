"""Deterministic seed derivation and keyed random streams.

Every stochastic operation in the toolkit derives its randomness from a
64-bit master seed combined with stable string/integer keys, so results are
independent of execution order and thread schedule.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 step: advance by the golden gamma and finalize."""
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    """FNV-1a hash of the UTF-8 encoding of `text`."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h


def derive_seed(master_seed: int, *keys) -> int:
    """Fold string/integer keys into a master seed.

    Strings are hashed with FNV-1a, integers are used directly; each key is
    mixed in with one splitmix64 step.
    """
    state = splitmix64(master_seed & _MASK64)
    for key in keys:
        if isinstance(key, str):
            k = fnv1a64(key)
        else:
            k = int(key) & _MASK64
        state = splitmix64(state ^ k)
    return state


def item_seed(master_seed: int, map_id: str) -> int:
    """Per-item augmentation seed: splitmix64(master XOR fnv1a64(map_id))."""
    return splitmix64((master_seed & _MASK64) ^ fnv1a64(map_id))


def _finalize_u64(state: np.ndarray) -> np.ndarray:
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def keyed_uniforms(key: int, n: int, offset: int = 0) -> np.ndarray:
    """`n` uniforms in [0, 1) from the splitmix64 stream seeded at `key`.

    Draw i is a pure function of (key, offset + i), so disjoint index ranges
    of the same stream can be generated independently and in parallel.
    """
    idx = np.arange(offset + 1, offset + n + 1, dtype=np.uint64)
    state = np.uint64(key & _MASK64) + idx * np.uint64(_GOLDEN)
    bits = _finalize_u64(state)
    return (bits >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


def keyed_normals(key: int, n: int) -> np.ndarray:
    """`n` standard normals from the keyed stream via Box-Muller."""
    u = keyed_uniforms(key, 2 * n)
    u1 = u[0::2] + 2.0 ** -53  # shift into (0, 1] so log() is finite
    u2 = u[1::2]
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
