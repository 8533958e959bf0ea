"""Deterministic derivation of per-module random streams from one seed.

Every random decision in the package flows from a single integer seed.
Independent streams are derived as (seed, tag, tag, ...) where tags are
short strings or integers, so parallel workers and resumed runs draw
the same numbers as a sequential, uninterrupted run.
"""

import hashlib

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def stream(seed: int, *tags) -> np.random.Generator:
    """A Generator keyed by (seed, *tags); stable across runs and platforms."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_tag_to_int(t) for t in tags]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
