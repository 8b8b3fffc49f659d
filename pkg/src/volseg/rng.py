"""Deterministic, splittable random streams.

Every stochastic operation in the package draws from a stream derived from a
64-bit root seed plus a tuple of tags (volume id, slice index, purpose
string, ...). Equal (seed, tags) always yields the same stream, on any
platform, so training and evaluation runs are reproducible bit-for-bit.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFFFFFFFFFF
    if isinstance(tag, str):
        digest = hashlib.sha256(tag.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"stream tags must be int or str, got {type(tag).__name__}")


def stream(seed: int, *tags) -> np.random.Generator:
    """Return a generator for the stream identified by (seed, tags)."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_tag_to_int(t) for t in tags]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
