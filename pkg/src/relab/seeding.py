"""Stable seed derivation.

Every random stream in the package is derived from a master seed plus a
structured key via SHA-256, so the full experiment grid is reproducible
from the manifest alone, independent of process, platform, and
PYTHONHASHSEED. Python's builtin ``hash`` is never used for seeding.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stable_hash(*parts) -> int:
    """64-bit hash of a structured key, stable across runs and machines.

    Parts may be ints, strings, floats, bools, None, or nested
    tuples/lists thereof; each part is length-prefixed so distinct keys
    cannot collide by concatenation.
    """
    h = hashlib.sha256()
    _feed(h, parts)
    return int.from_bytes(h.digest()[:8], "little")


def _feed(h, part) -> None:
    if isinstance(part, (tuple, list)):
        h.update(b"T%d:" % len(part))
        for item in part:
            _feed(h, item)
    elif isinstance(part, bool):
        h.update(b"B1:" + (b"1" if part else b"0"))
    elif isinstance(part, (int, np.integer)):
        enc = str(int(part)).encode()
        h.update(b"I%d:" % len(enc) + enc)
    elif isinstance(part, float):
        enc = repr(part).encode()
        h.update(b"F%d:" % len(enc) + enc)
    elif isinstance(part, str):
        enc = part.encode("utf-8")
        h.update(b"S%d:" % len(enc) + enc)
    elif part is None:
        h.update(b"N0:")
    else:
        raise TypeError(f"unhashable seed part: {type(part).__name__}")


def derive_rng(*parts) -> np.random.Generator:
    """PCG64 generator seeded by the stable hash of the key parts."""
    return np.random.Generator(np.random.PCG64(stable_hash(*parts)))
