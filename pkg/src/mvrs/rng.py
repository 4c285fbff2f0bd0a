"""Named random streams.

Every draw in the package comes from a Philox counter-based generator whose
seed sequence is ``SeedSequence(seed, spawn_key=labels)``. Labels are small
tuples such as ``("pilot", r)`` or ``("draw", r, j)``; string parts are mapped to
integers with CRC-32 so the mapping is stable across Python versions and
processes. Two streams with different labels are statistically independent,
and creating a new stream never advances an existing one.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream labels must be non-negative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *labels) -> np.random.Generator:
    """Independent generator for ``labels`` under the master ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_label_int(p) for p in labels))
    return np.random.Generator(np.random.Philox(ss))
