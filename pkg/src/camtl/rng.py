"""Deterministic, name-addressed random streams.

Every parameter and every data source draws from its own generator, keyed
by (seed, *labels). Streams are therefore independent of construction
order, which is what makes model variants with shared submodules start
from identical base weights.
"""

import hashlib

import numpy as np


def child_seed(seed: int, *labels) -> int:
    """Stable 64-bit seed derived from a root seed and a label path."""
    key = ":".join([str(int(seed))] + [str(l) for l in labels])
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_rng(seed: int, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(child_seed(seed, *labels)))
