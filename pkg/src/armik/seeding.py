"""Named, reproducible RNG substreams.

All randomness in the package flows from one user seed. Each consumer asks
for a substream by label; labels are hashed with a stable digest (not
Python's randomized ``hash``) into the key of a counter-based Philox
generator, so substreams are independent and the draw sequence for a given
(seed, label) pair is identical across runs, platforms, and worker counts.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _label_key(label: str) -> int:
    digest = hashlib.blake2s(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for (seed, label)."""
    key = np.array([seed & _MASK64, _label_key(label)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
