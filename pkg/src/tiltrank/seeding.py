"""Per-stage seed derivation from one master seed.

``stage_seed(master, name)`` feeds ``[master, crc32(name)]`` through
``numpy.random.SeedSequence`` and returns the first 63-bit word, so every
pipeline stage draws from its own reproducible stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def stage_seed(master: int, name: str) -> int:
    ss = np.random.SeedSequence([int(master), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def stage_rng(master: int, name: str) -> np.random.Generator:
    return np.random.default_rng(stage_seed(master, name))
