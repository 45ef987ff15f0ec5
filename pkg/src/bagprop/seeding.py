"""Deterministic random-stream derivation from a single root seed.

Every source of randomness in a run is a named stream derived from the
root seed, so adding or reordering parallel work never changes results.
"""

import zlib

import numpy as np


def stream(root_seed, *tags) -> np.random.Generator:
    """Return an independent generator keyed by ``(root_seed, *tags)``.

    Tags may be ints or strings; strings are hashed with crc32 so the
    derivation is stable across processes and platforms.
    """
    words = [int(root_seed) & 0xFFFFFFFFFFFFFFFF]
    for tag in tags:
        if isinstance(tag, (int, np.integer)):
            words.append(int(tag) & 0xFFFFFFFFFFFFFFFF)
        else:
            words.append(zlib.crc32(str(tag).encode("utf-8")))
    return np.random.default_rng(np.random.SeedSequence(words))
