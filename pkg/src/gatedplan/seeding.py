"""Reproducible 64-bit seed derivation.

``derive_seed(root, *labels)`` folds each label into the root with a
splitmix64 finalizer. String labels enter through an 8-byte BLAKE2b digest,
integers directly, so the mapping is identical on any platform.
"""

from __future__ import annotations

import hashlib

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _label_word(label) -> int:
    if isinstance(label, bool):
        label = str(label)
    if isinstance(label, int):
        return label & MASK64
    return int.from_bytes(hashlib.blake2b(str(label).encode(), digest_size=8).digest(), "little")


def derive_seed(root: int, *labels) -> int:
    h = splitmix64(root & MASK64)
    for label in labels:
        h = splitmix64(h ^ _label_word(label))
    return h
