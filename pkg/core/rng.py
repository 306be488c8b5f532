"""
Counter-based random streams.

Every stream is a Philox generator whose 128-bit key is derived from
``(seed, *path)``. Draw ``i`` of a stream depends only on the key and the
counter position ``i``, so replication ``r`` (or record block ``b``) gets an
independent stream without sharing state with any other worker.
"""
import zlib
from typing import Union

import numpy as np

PathPart = Union[int, str]


def _part(part: PathPart) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if part < 0:
        raise ValueError(f"stream path components must be non-negative, got {part}")
    return int(part)


def stream_key(seed: int, *path: PathPart) -> np.ndarray:
    entropy = [int(seed)] + [_part(p) for p in path]
    return np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint64)


def philox_stream(seed: int, *path: PathPart) -> np.random.Generator:
    """Generator keyed by (seed, *path), counter starting at zero"""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *path)))
