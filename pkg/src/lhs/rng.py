"""Seed splitting: one 64-bit run seed -> independent, named Philox streams."""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    return zlib.crc32(str(part).encode())


def stream(seed: int, *path) -> np.random.Generator:
    """Generator for the stream ``path`` under ``seed``.

    ``stream(7, "refine", 3)`` is always the same sequence, and is independent
    of ``stream(7, "refine", 4)`` or ``stream(7, "mask", 3)``.
    """
    entropy = [_key(seed)] + [_key(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
