"""
Paillier encryption on top of python-paillier's raw integer interface.

Ciphertexts are plain integers in Z_{n^2} tagged with an 8-byte key fingerprint,
so the homomorphic operations here work on the raw values instead of phe's
EncryptedNumber encoding layer.
"""

import hashlib
import logging
import struct
from dataclasses import dataclass

import gmpy2
import numpy as np
from phe import paillier as phe_paillier

from utils.errors import ConfigurationError, KeyMismatchError, PlaintextRangeError
from utils.randomness import random_bits, random_below

logger = logging.getLogger(__name__)

MIN_KEY_BITS = 1024
DEFAULT_KEY_BITS = 2048
FINGERPRINT_BYTES = 8


def key_fingerprint(n: int) -> bytes:
    return hashlib.sha256(n.to_bytes((n.bit_length() + 7) // 8, "big")).digest()[:FINGERPRINT_BYTES]


@dataclass(frozen=True)
class PaillierCiphertext:
    value: int
    fingerprint: bytes

    def to_bytes(self, width: int | None = None) -> bytes:
        """Length-prefixed encoding; a fixed ``width`` keeps every ciphertext under one key the same size."""
        raw = self.value.to_bytes(width or (self.value.bit_length() + 7) // 8 or 1, "big")
        return struct.pack(">H", len(raw)) + raw + self.fingerprint

    @classmethod
    def from_bytes(cls, data: bytes, offset: int = 0) -> tuple["PaillierCiphertext", int]:
        (length,) = struct.unpack_from(">H", data, offset)
        offset += 2
        value = int.from_bytes(data[offset : offset + length], "big")
        offset += length
        fingerprint = bytes(data[offset : offset + FINGERPRINT_BYTES])
        if len(fingerprint) != FINGERPRINT_BYTES:
            raise ValueError("truncated Paillier ciphertext")
        return cls(value, fingerprint), offset + FINGERPRINT_BYTES


class PaillierPublicKey:
    def __init__(self, n: int):
        self.raw = phe_paillier.PaillierPublicKey(n)
        self.n = n
        self.nsquare = n * n
        self.fingerprint = key_fingerprint(n)

    @property
    def bits(self) -> int:
        return self.n.bit_length()

    @property
    def ciphertext_bytes(self) -> int:
        return (self.nsquare.bit_length() + 7) // 8

    def to_bytes(self) -> bytes:
        raw = self.n.to_bytes((self.n.bit_length() + 7) // 8, "big")
        return struct.pack(">H", len(raw)) + raw

    @classmethod
    def from_bytes(cls, data: bytes, offset: int = 0) -> tuple["PaillierPublicKey", int]:
        (length,) = struct.unpack_from(">H", data, offset)
        offset += 2
        return cls(int.from_bytes(data[offset : offset + length], "big")), offset + length

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PaillierPublicKey) and other.n == self.n

    def __hash__(self) -> int:
        return hash(self.n)


@dataclass(frozen=True)
class PaillierKeyPair:
    public_key: PaillierPublicKey
    private_key: phe_paillier.PaillierPrivateKey

    @property
    def n(self) -> int:
        return self.public_key.n


def _seeded_prime(rng: np.random.Generator, bits: int) -> int:
    # top two bits set so that the product of two such primes has exactly 2*bits bits
    candidate = random_bits(rng, bits) | (3 << (bits - 2)) | 1
    return int(gmpy2.next_prime(candidate))


def keygen(bits: int = DEFAULT_KEY_BITS, rng: np.random.Generator | None = None) -> PaillierKeyPair:
    """Generate a key pair with an exactly ``bits``-bit modulus.

    With ``rng`` the primes come from the seeded stream (reproducible sessions);
    otherwise python-paillier's system-random generator is used.
    """
    if bits < MIN_KEY_BITS:
        raise ConfigurationError(f"Paillier modulus of {bits} bits is below the {MIN_KEY_BITS}-bit floor")

    if rng is None:
        public, private = phe_paillier.generate_paillier_keypair(n_length=bits)
        public_key = PaillierPublicKey(public.n)
        return PaillierKeyPair(public_key, phe_paillier.PaillierPrivateKey(public_key.raw, private.p, private.q))

    half = bits // 2
    while True:
        p = _seeded_prime(rng, half)
        q = _seeded_prime(rng, bits - half)
        if p != q and (p * q).bit_length() == bits:
            break

    public_key = PaillierPublicKey(p * q)
    private_key = phe_paillier.PaillierPrivateKey(public_key.raw, p, q)
    logger.debug(f"Generated seeded {bits}-bit Paillier key {public_key.fingerprint.hex()}")
    return PaillierKeyPair(public_key, private_key)


def _check_same_key(*fingerprints: bytes) -> None:
    if len(set(fingerprints)) != 1:
        raise KeyMismatchError("Paillier operands are under different keys")


def _obfuscator(pk: PaillierPublicKey, rng: np.random.Generator | None) -> int:
    r = pk.raw.get_random_lt_n() if rng is None else 1 + random_below(rng, pk.n - 1)
    return int(gmpy2.powmod(r, pk.n, pk.nsquare))


def enc(m: int, pk: PaillierPublicKey, rng: np.random.Generator | None = None) -> PaillierCiphertext:
    if not 0 <= m < pk.n:
        raise PlaintextRangeError(f"Paillier plaintext must lie in [0, n), got a {m.bit_length()}-bit value")
    # g = n + 1, so g^m = 1 + m*n mod n^2
    nude = (1 + m * pk.n) % pk.nsquare
    return PaillierCiphertext((nude * _obfuscator(pk, rng)) % pk.nsquare, pk.fingerprint)


def dec(c: PaillierCiphertext, keys: PaillierKeyPair) -> int:
    """Decrypt. A ciphertext under another key is not detected here beyond the fingerprint."""
    _check_same_key(c.fingerprint, keys.public_key.fingerprint)
    return int(keys.private_key.raw_decrypt(int(c.value)))


def add(c1: PaillierCiphertext, c2: PaillierCiphertext, pk: PaillierPublicKey) -> PaillierCiphertext:
    _check_same_key(c1.fingerprint, c2.fingerprint, pk.fingerprint)
    return PaillierCiphertext((c1.value * c2.value) % pk.nsquare, pk.fingerprint)


def add_plain(
    c: PaillierCiphertext, k: int, pk: PaillierPublicKey, rng: np.random.Generator | None = None
) -> PaillierCiphertext:
    """Add a public constant; with ``rng`` the result is also re-randomized."""
    _check_same_key(c.fingerprint, pk.fingerprint)
    value = (c.value * (1 + (k % pk.n) * pk.n)) % pk.nsquare
    if rng is not None:
        value = (value * _obfuscator(pk, rng)) % pk.nsquare
    return PaillierCiphertext(value, pk.fingerprint)


def sub_plain(
    c: PaillierCiphertext, k: int, pk: PaillierPublicKey, rng: np.random.Generator | None = None
) -> PaillierCiphertext:
    return add_plain(c, pk.n - (k % pk.n), pk, rng)


def scalar_mul(c: PaillierCiphertext, k: int, pk: PaillierPublicKey) -> PaillierCiphertext:
    _check_same_key(c.fingerprint, pk.fingerprint)
    k %= pk.n
    if k > pk.n // 2:
        # negative constants: invert once, then a short exponent
        inverse = gmpy2.invert(c.value, pk.nsquare)
        value = gmpy2.powmod(inverse, pk.n - k, pk.nsquare)
    else:
        value = gmpy2.powmod(c.value, k, pk.nsquare)
    return PaillierCiphertext(int(value), pk.fingerprint)


def rerandomize(c: PaillierCiphertext, pk: PaillierPublicKey, rng: np.random.Generator | None = None):
    return add_plain(c, 0, pk, rng if rng is not None else np.random.default_rng())
