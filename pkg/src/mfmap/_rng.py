"""Named, seeded random streams.

Every stream is a counter-based Philox generator keyed by the user seed and a
stream name, so adding a consumer never shifts another consumer's draws.
"""

import zlib

import numpy as np


def _key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), _key(name), *[int(e) for e in extra]])
    return np.random.Generator(np.random.Philox(ss))


def replicate_normals(seed: int, name: str, count: int, size: int, start: int = 0) -> np.ndarray:
    """``(count, size)`` standard normals; row ``j`` depends only on ``(seed, name, start + j)``."""
    out = np.empty((count, size))
    for j in range(count):
        out[j] = stream(seed, name, start + j).standard_normal(size)
    return out
