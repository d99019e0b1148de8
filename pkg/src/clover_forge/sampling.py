"""Deterministic sampling primitives used by every module that draws randomly.

The generator is the stock Mersenne Twister (`random.Random`) and selection is
a partial Fisher-Yates shuffle, so a (seed, n, size) triple always maps to the
same index sequence. The algorithm identifier lives in the config file as
`sampler = mt19937_fisher_yates`; no other algorithm is accepted.
"""

from __future__ import annotations

import hashlib
import random

SAMPLER_ALGORITHM = "mt19937_fisher_yates"


def derive_seed(seed: int, key: str) -> int:
    """Derive a per-item seed from a run seed and a stable string key."""
    digest = hashlib.sha256(f"{seed}\x1f{key}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def sample_indices(n: int, size: int, seed: int) -> list[int]:
    """Draw `size` distinct indices from range(n), uniformly, in sampled order.

    Partial Fisher-Yates: position i swaps with a uniform j in [i, n).
    """
    if size < 0:
        raise ValueError(f"sample size must be >= 0, got {size}")
    if size > n:
        raise ValueError(f"cannot sample {size} items from a population of {n}")
    rng = random.Random(seed)
    idx = list(range(n))
    for i in range(size):
        j = rng.randrange(i, n)
        idx[i], idx[j] = idx[j], idx[i]
    return idx[:size]


def shuffle_indices(n: int, seed: int) -> list[int]:
    """Full deterministic permutation of range(n)."""
    return sample_indices(n, n, seed)
