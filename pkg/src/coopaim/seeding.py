"""Named random sub-streams derived from one master seed."""
from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for component ``name``; stable across runs and platforms."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])
