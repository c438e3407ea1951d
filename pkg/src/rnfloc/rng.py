"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by a
tuple of non-negative integers, typically ``(seed, trial, stream)``.  The
same key always yields the same stream no matter which process or in which
order it is requested, which is what makes parallel Monte-Carlo runs
reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np

# Stream identifiers.  Fixed integers so keys are stable across versions.
NOISE = 1
ANTENNA = 2
TARGET = 3
GEOMETRY = 4
INIT = 10
RESTART = 11


def method_stream(name: str) -> int:
    """Stable stream id for a method name (crc32, not Python's salted hash)."""
    return 1000 + zlib.crc32(name.encode()) % 100_000


def generator(*key: int) -> np.random.Generator:
    """Return a Philox generator keyed by ``key``."""
    if not key:
        raise ValueError("at least one key component is required")
    ss = np.random.SeedSequence([int(k) for k in key])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(*key: int) -> int:
    """Collapse a key tuple into a single 63-bit seed."""
    ss = np.random.SeedSequence([int(k) for k in key])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
