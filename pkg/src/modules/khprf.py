"""
Exact key-homomorphic PRF: eval(k, m) = H(m)^k in the quadratic residues of a safe-prime group.

Outputs under keys k1 and k2 multiply to the output under k1 + k2 (mod the subgroup
order). Keys are kept centered mod the order, so the small protocol keys and their
small negative differences evaluate with short exponents.
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import Any

import gmpy2
import numpy as np

from utils.randomness import random_bits

logger = logging.getLogger(__name__)

# RFC 3526 group 14, 2048-bit MODP safe prime
MODP_2048_HEX = (
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD1"
    "29024E088A67CC74020BBEA63B139B22514A08798E3404DD"
    "EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245"
    "E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3D"
    "C2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F"
    "83655D23DCA3AD961C62F356208552BB9ED529077096966D"
    "670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9"
    "DE2BCBF6955817183995497CEA956AE515D2261898FA0510"
    "15728E5A8AACAA68FFFFFFFFFFFFFFFF"
)
P = int(MODP_2048_HEX, 16)
Q = (P - 1) // 2
OUTPUT_BYTES = (P.bit_length() + 7) // 8
HASH_DOMAIN = b"recshield/khprf/v1"
DEFAULT_CHECK_BYTES = 16


def _center(value: int) -> int:
    value %= Q
    return value - Q if value > Q // 2 else value


@dataclass(frozen=True)
class PrfKey:
    value: int

    @classmethod
    def of(cls, value: int) -> "PrfKey":
        return cls(_center(value))

    def add(self, amount: int) -> "PrfKey":
        return PrfKey.of(self.value + amount)

    def sub(self, amount: int) -> "PrfKey":
        return PrfKey.of(self.value - amount)


@dataclass(frozen=True)
class PrfOutput:
    element: int

    def to_bytes(self) -> bytes:
        return self.element.to_bytes(OUTPUT_BYTES, "big")

    @classmethod
    def from_bytes(cls, data: bytes, offset: int = 0) -> tuple["PrfOutput", int]:
        raw = data[offset : offset + OUTPUT_BYTES]
        if len(raw) != OUTPUT_BYTES:
            raise ValueError("truncated PRF output")
        element = int.from_bytes(raw, "big")
        if not 0 < element < P:
            raise ValueError("PRF output is not a group element")
        return cls(element), offset + OUTPUT_BYTES


IDENTITY = PrfOutput(1)


def key_add(key: PrfKey, amount: int) -> PrfKey:
    return key.add(amount)


def key_sub(key: PrfKey, amount: int) -> PrfKey:
    return key.sub(amount)


def random_key(rng: np.random.Generator, bits: int) -> PrfKey:
    return PrfKey.of(random_bits(rng, bits))


def hash_to_group(message: bytes) -> int:
    """Map bytes onto the order-Q subgroup: squared SHAKE-256 expansion mod P."""
    counter = 0
    while True:
        shake = hashlib.shake_256(HASH_DOMAIN + counter.to_bytes(4, "big") + message)
        candidate = int.from_bytes(shake.digest(OUTPUT_BYTES + 16), "big") % P
        element = int(gmpy2.powmod(candidate, 2, P))
        if element not in (0, 1):
            return element
        counter += 1


def eval_prf(key: PrfKey, message: bytes) -> PrfOutput:
    if key.value == 0:
        return IDENTITY
    return PrfOutput(int(gmpy2.powmod(hash_to_group(message), key.value, P)))


def combine(a: PrfOutput, b: PrfOutput) -> PrfOutput:
    return PrfOutput(int(gmpy2.mul(a.element, b.element) % P))


def check_hash(output: PrfOutput, length: int = DEFAULT_CHECK_BYTES) -> bytes:
    """The truncated hash H used for match checks."""
    return hashlib.sha256(b"recshield/check" + output.to_bytes()).digest()[:length]


class KhPrf:
    """Config-bound facade that also memoizes H(m) per message within a session."""

    def __init__(self, config: dict[str, Any] | None = None):
        self.khprf_config = (config or {}).get("khprf", {})
        self.check_bytes = int(self.khprf_config.get("check_bytes", DEFAULT_CHECK_BYTES))
        self._hashes: dict[bytes, int] = {}

    def _hash(self, message: bytes) -> int:
        element = self._hashes.get(message)
        if element is None:
            element = hash_to_group(message)
            self._hashes[message] = element
        return element

    def evaluate(self, key: PrfKey, message: bytes) -> PrfOutput:
        if key.value == 0:
            return IDENTITY
        return PrfOutput(int(gmpy2.powmod(self._hash(message), key.value, P)))

    def combine(self, a: PrfOutput, b: PrfOutput) -> PrfOutput:
        return combine(a, b)

    def check(self, output: PrfOutput) -> bytes:
        return check_hash(output, self.check_bytes)
