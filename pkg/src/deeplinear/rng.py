"""Deterministic seed derivation.

A single 64-bit master seed fans out into independent streams (one per
layer, per scan cell, per Monte-Carlo trial) by hashing ``(seed, key...)``
with the splitmix64 finalizer. The derived 64-bit values seed numpy's
PCG64 generator.
"""

from __future__ import annotations

import numpy as np

__all__ = ["splitmix64", "derive_seed", "make_rng"]

_MASK = (1 << 64) - 1


def splitmix64(x):
    """One splitmix64 step: advance by the golden gamma and mix."""
    z = (int(x) + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed, *keys):
    """Fold integer ``keys`` into ``seed`` and return a 64-bit child seed.

    Strings are accepted as keys and folded byte by byte, so
    ``derive_seed(s, "gaussian", 3)`` is stable across runs and platforms.
    """
    h = splitmix64(int(seed) & _MASK)
    for key in keys:
        if isinstance(key, str):
            for byte in key.encode("utf-8"):
                h = splitmix64(h ^ byte)
            h = splitmix64(h ^ 0xFF)
        else:
            h = splitmix64(h ^ (int(key) & _MASK))
    return h


def make_rng(seed, *keys):
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *keys)))
