"""Seeded random streams.

Philox is counter-based, so a stream is fully determined by its key and the
result does not depend on how work is split across threads.
"""

import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator keyed by ``seed``; extra integers select independent streams."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return make_rng(seed)
