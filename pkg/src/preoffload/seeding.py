"""Named random sub-streams derived from one root seed."""

from __future__ import annotations

import zlib

import numpy as np


def substream_seed(root: int, name: str, *extra: int) -> int:
    """A 63-bit seed that depends only on (root, name, extra)."""
    seq = np.random.SeedSequence([int(root) & 0xFFFFFFFF, zlib.crc32(name.encode()), *[int(e) for e in extra]])
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def substream(root: int, name: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(substream_seed(root, name, *extra))
