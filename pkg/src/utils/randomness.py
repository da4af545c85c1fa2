"""
Seeded randomness helpers.

Every party and every protocol step draws from its own labelled stream derived
from the session seed, so a whole session replays bit-for-bit from one integer.
"""

import zlib

import numpy as np


def make_rng(seed: int | None, *labels: str) -> np.random.Generator:
    """Return an independent generator for ``labels`` under ``seed``.

    ``seed=None`` draws fresh OS entropy.
    """
    if seed is None:
        return np.random.default_rng()
    spawn_key = tuple(zlib.crc32(label.encode("utf-8")) for label in labels)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=spawn_key))


def random_bits(rng: np.random.Generator, bits: int) -> int:
    """Uniform integer in [0, 2^bits)."""
    if bits <= 0:
        return 0
    nbytes = (bits + 7) // 8
    value = int.from_bytes(rng.bytes(nbytes), "big")
    return value >> (nbytes * 8 - bits)


def random_below(rng: np.random.Generator, bound: int) -> int:
    """Uniform integer in [0, bound) by rejection sampling."""
    if bound <= 0:
        raise ValueError(f"bound must be positive, got {bound}")
    bits = (bound - 1).bit_length()
    while True:
        value = random_bits(rng, bits)
        if value < bound:
            return value


def random_unit_mod(rng: np.random.Generator, p: int) -> int:
    """Uniform nonzero residue modulo the prime ``p``."""
    return 1 + random_below(rng, p - 1)


def fisher_yates(rng: np.random.Generator, n: int) -> list[int]:
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = random_below(rng, i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm
