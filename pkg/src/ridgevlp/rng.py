"""Counter-based random streams.

Each stream is a Philox generator keyed by ``(seed, stream_id)``, so the
numbers drawn for one purpose (say, the image mask of study 17 at step 3)
never depend on how many numbers other purposes consumed before it.
"""
import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_id(*labels) -> int:
    """Hash an arbitrary tuple of labels (str/int) to a 64-bit stream id."""
    h = hashlib.blake2b(digest_size=8)
    for label in labels:
        h.update(repr(label).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def generator(seed: int, *labels) -> np.random.Generator:
    key = np.array([int(seed) & _MASK64, stream_id(*labels)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
