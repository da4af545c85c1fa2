"""
Batched BFV somewhat-homomorphic encryption over Z_q[x]/(x^n + 1).

Plaintexts are slot vectors mod t = p1 * p2 (see batching). Every ciphertext
carries a level counter and a conservative noise estimate in bits; the estimate
only grows, which is what ``noise_budget`` reports.
"""

import hashlib
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from modules import polyring
from modules.batching import DEFAULT_PRIMES, SlotEncoder
from utils.errors import ConfigurationError, DepthExceededError, KeyMismatchError, PlaintextRangeError

logger = logging.getLogger(__name__)

CIPHERTEXT_MAGIC = b"SWCT"
DEFAULT_SIGMA = 3.2
# the "paper" profile keeps n = 8192; both moduli are sized for two multiplications plus RAND
SWHE_PROFILES: dict[str, dict[str, Any]] = {
    "desk": {"poly_degree": 4096, "coeff_modulus_bits": 440, "max_depth": 2, "sigma": DEFAULT_SIGMA},
    "paper": {"poly_degree": 8192, "coeff_modulus_bits": 460, "max_depth": 2, "sigma": DEFAULT_SIGMA},
}
NARROW_MODULUS_226 = 2**226 - 2**26 + 1


def _log2_sum(*bits: float) -> float:
    """log2 of a sum of powers of two given by their exponents."""
    return float(np.logaddexp2.reduce(np.array(bits, dtype=np.float64)))


@dataclass(frozen=True)
class SwheParams:
    poly_degree: int
    coeff_modulus: int
    plain_primes: tuple[int, int] = DEFAULT_PRIMES
    max_depth: int = 2
    sigma: float = DEFAULT_SIGMA
    name: str = "custom"

    @classmethod
    def from_profile(cls, profile: str | dict[str, Any]) -> "SwheParams":
        """Build from a profile name or a config dict.

        ``coeff_modulus_bits`` picks q = t * 2^k + 1 of about that size, so q = 1 mod t.
        """
        name = profile if isinstance(profile, str) else profile.get("name", "custom")
        if isinstance(profile, str):
            if profile not in SWHE_PROFILES:
                raise ConfigurationError(f"unknown SWHE profile '{profile}' (known: {', '.join(SWHE_PROFILES)})")
            profile = SWHE_PROFILES[profile]

        primes = tuple(profile.get("plain_primes", DEFAULT_PRIMES))
        t = primes[0] * primes[1]
        if profile.get("coeff_modulus"):
            q = int(profile["coeff_modulus"])
        else:
            shift = int(profile.get("coeff_modulus_bits", 440)) - t.bit_length()
            if shift < 1:
                raise ConfigurationError("coefficient modulus must be larger than the plaintext modulus")
            q = (t << shift) + 1
        return cls(
            poly_degree=int(profile.get("poly_degree", 4096)),
            coeff_modulus=q,
            plain_primes=primes,
            max_depth=int(profile.get("max_depth", 2)),
            sigma=float(profile.get("sigma", DEFAULT_SIGMA)),
            name=name,
        )

    @property
    def plain_modulus(self) -> int:
        return self.plain_primes[0] * self.plain_primes[1]

    @property
    def delta(self) -> int:
        return self.coeff_modulus // self.plain_modulus

    @property
    def special_modulus(self) -> int:
        # relinearization works modulo P*q with P comfortably above q*n
        return 1 << (self.coeff_modulus.bit_length() + self.poly_degree.bit_length() + 16)

    @property
    def params_id(self) -> bytes:
        text = f"{self.poly_degree}|{self.coeff_modulus}|{self.plain_primes}|{self.max_depth}|{self.sigma}"
        return hashlib.sha256(text.encode()).digest()[:8]

    @property
    def coeff_bytes(self) -> int:
        return (self.coeff_modulus.bit_length() + 7) // 8

    # -- noise estimates, in bits of the infinity norm -------------------------

    @property
    def fresh_noise_bits(self) -> float:
        return math.log2((2 * self.poly_degree + 1) * 6 * self.sigma)

    @property
    def wrap_error_bits(self) -> float:
        return math.log2(max(1, self.coeff_modulus % self.plain_modulus))

    @property
    def decryption_bound_bits(self) -> float:
        return math.log2(self.delta / 2)

    def noise_after_add(self, a: float, b: float) -> float:
        return max(a, b) + 1.0

    def noise_after_add_plain(self, a: float) -> float:
        return _log2_sum(a, self.wrap_error_bits)

    def noise_after_mul(self, a: float, b: float) -> float:
        n = self.poly_degree
        growth = math.log2(self.plain_modulus) + math.log2(n * (n + 2) / 2)
        return growth + _log2_sum(a, b, self.wrap_error_bits) + 1.0

    def noise_after_mul_plain(self, a: float) -> float:
        n = self.poly_degree
        return math.log2(n * self.plain_modulus / 2) + _log2_sum(a, self.wrap_error_bits - 1)

    def validate(self) -> None:
        n = self.poly_degree
        if n < 2 or n & (n - 1):
            raise ConfigurationError(f"polynomial degree must be a power of two, got {n}")
        if self.max_depth < 1:
            raise ConfigurationError("max_depth must allow at least one multiplication")
        if math.gcd(self.coeff_modulus, self.plain_modulus) != 1:
            raise ConfigurationError("plaintext modulus t is not coprime to the ciphertext modulus q")
        if self.coeff_modulus <= self.plain_modulus:
            raise ConfigurationError("ciphertext modulus must exceed the plaintext modulus")
        for p in self.plain_primes:
            if (p - 1) % (2 * n):
                raise ConfigurationError(f"x^{n}+1 does not split modulo {p}; slot batching unavailable")

        noise = self.fresh_noise_bits
        for _ in range(self.max_depth):
            noise = self.noise_after_mul(noise, noise)
        noise = self.noise_after_mul_plain(noise) + 2.0
        if noise >= self.decryption_bound_bits:
            raise ConfigurationError(
                f"parameters cannot carry {self.max_depth} multiplications plus a plaintext multiplication: "
                f"estimated noise {noise:.1f} bits vs bound {self.decryption_bound_bits:.1f} bits"
            )


@dataclass(frozen=True)
class SlotVector:
    values: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.values)


@dataclass(eq=False)
class SwheCiphertext:
    c0: np.ndarray
    c1: np.ndarray
    fingerprint: bytes
    level: int = 0
    noise_bits: float = 0.0
    slots_used: int = 0


@dataclass(eq=False)
class SwheEvaluationKey:
    """Public material the evaluating party needs: the relinearization key."""

    b: np.ndarray
    a: np.ndarray
    fingerprint: bytes


@dataclass(eq=False)
class SwheKeySet:
    params: SwheParams
    secret: np.ndarray
    public_b: np.ndarray
    public_a: np.ndarray
    evaluation_key: SwheEvaluationKey
    fingerprint: bytes = field(default=b"")


class SwheContext:
    def __init__(self, params: SwheParams):
        params.validate()
        self.params = params
        self.n = params.poly_degree
        self.q = params.coeff_modulus
        self.t = params.plain_modulus
        self.encoder = SlotEncoder(self.n, params.plain_primes)
        logger.debug(f"SWHE context n={self.n}, log2 q={self.q.bit_length()}, log2 t={self.t.bit_length()}")

    @property
    def slot_count(self) -> int:
        return self.n

    # -- keys ------------------------------------------------------------------

    def keygen(self, rng: np.random.Generator) -> SwheKeySet:
        n, q, p = self.n, self.q, self.params
        s = polyring.sample_ternary(rng, n)

        a = polyring.sample_uniform(rng, n, q)
        e = polyring.sample_gaussian(rng, n, p.sigma)
        b = polyring.center(-(polyring.negacyclic_mul(a, s) + e), q)

        big = p.special_modulus * q
        a_r = polyring.sample_uniform(rng, n, big)
        e_r = polyring.sample_gaussian(rng, n, p.sigma)
        s_squared = polyring.negacyclic_mul(s, s)
        b_r = polyring.center(-(polyring.negacyclic_mul(a_r, s) + e_r) + p.special_modulus * s_squared, big)

        digest = hashlib.sha256(p.params_id + self._poly_bytes(a, q))
        fingerprint = digest.digest()[:8]
        return SwheKeySet(
            params=p,
            secret=s,
            public_b=b,
            public_a=a,
            evaluation_key=SwheEvaluationKey(b_r, a_r, fingerprint),
            fingerprint=fingerprint,
        )

    # -- encoding --------------------------------------------------------------

    def encode(self, values) -> SlotVector:
        slots = tuple(int(v) for v in values)
        if len(slots) > self.n:
            raise PlaintextRangeError(f"{len(slots)} values exceed the {self.n} available slots")
        for v in slots:
            if not 0 <= v < self.t:
                raise PlaintextRangeError(f"slot value {v} outside [0, t)")
        return SlotVector(slots + (0,) * (self.n - len(slots)))

    def decode(self, vector: SlotVector, count: int | None = None) -> list[int]:
        return list(vector.values[: self.n if count is None else count])

    # -- encryption ------------------------------------------------------------

    def encrypt(
        self, vector: SlotVector, keys: SwheKeySet, rng: np.random.Generator, slots_used: int | None = None
    ) -> SwheCiphertext:
        n, q = self.n, self.q
        m = self.encoder.encode(vector.values)
        u = polyring.sample_ternary(rng, n)
        e1 = polyring.sample_gaussian(rng, n, self.params.sigma)
        e2 = polyring.sample_gaussian(rng, n, self.params.sigma)
        c0 = polyring.center(polyring.negacyclic_mul(keys.public_b, u) + e1 + self.params.delta * m, q)
        c1 = polyring.center(polyring.negacyclic_mul(keys.public_a, u) + e2, q)
        return SwheCiphertext(
            c0=c0,
            c1=c1,
            fingerprint=keys.fingerprint,
            level=0,
            noise_bits=self.params.fresh_noise_bits,
            slots_used=n if slots_used is None else slots_used,
        )

    def _phase(self, ct: SwheCiphertext, keys: SwheKeySet) -> np.ndarray:
        self._check_keys(ct.fingerprint, keys.fingerprint)
        return polyring.center(ct.c0 + polyring.negacyclic_mul(ct.c1, keys.secret), self.q)

    def decrypt(self, ct: SwheCiphertext, keys: SwheKeySet) -> SlotVector:
        phase = self._phase(ct, keys)
        m = polyring.scale_round(phase, self.t, self.q) % self.t
        return SlotVector(tuple(self.encoder.decode(m)))

    # -- homomorphic operations --------------------------------------------------

    @staticmethod
    def _check_keys(*fingerprints: bytes) -> None:
        if len(set(fingerprints)) != 1:
            raise KeyMismatchError("SWHE operands are under different keys")

    def add(self, a: SwheCiphertext, b: SwheCiphertext) -> SwheCiphertext:
        self._check_keys(a.fingerprint, b.fingerprint)
        return SwheCiphertext(
            c0=polyring.center(a.c0 + b.c0, self.q),
            c1=polyring.center(a.c1 + b.c1, self.q),
            fingerprint=a.fingerprint,
            level=max(a.level, b.level),
            noise_bits=self.params.noise_after_add(a.noise_bits, b.noise_bits),
            slots_used=max(a.slots_used, b.slots_used),
        )

    def sub(self, a: SwheCiphertext, b: SwheCiphertext) -> SwheCiphertext:
        self._check_keys(a.fingerprint, b.fingerprint)
        return SwheCiphertext(
            c0=polyring.center(a.c0 - b.c0, self.q),
            c1=polyring.center(a.c1 - b.c1, self.q),
            fingerprint=a.fingerprint,
            level=max(a.level, b.level),
            noise_bits=self.params.noise_after_add(a.noise_bits, b.noise_bits),
            slots_used=max(a.slots_used, b.slots_used),
        )

    def _shift_plain(self, ct: SwheCiphertext, vector: SlotVector, sign: int) -> SwheCiphertext:
        m = self.encoder.encode(vector.values)
        return SwheCiphertext(
            c0=polyring.center(ct.c0 + sign * self.params.delta * m, self.q),
            c1=ct.c1,
            fingerprint=ct.fingerprint,
            level=ct.level,
            noise_bits=self.params.noise_after_add_plain(ct.noise_bits),
            slots_used=ct.slots_used,
        )

    def add_plain(self, ct: SwheCiphertext, vector: SlotVector) -> SwheCiphertext:
        return self._shift_plain(ct, vector, 1)

    def sub_plain(self, ct: SwheCiphertext, vector: SlotVector) -> SwheCiphertext:
        return self._shift_plain(ct, vector, -1)

    def mul_plain(self, ct: SwheCiphertext, vector: SlotVector) -> SwheCiphertext:
        """Slotwise product with a public vector (the partial multiplication)."""
        p = self.encoder.encode(vector.values)
        return SwheCiphertext(
            c0=polyring.mul_mod(ct.c0, p, self.q),
            c1=polyring.mul_mod(ct.c1, p, self.q),
            fingerprint=ct.fingerprint,
            level=ct.level,
            noise_bits=self.params.noise_after_mul_plain(ct.noise_bits),
            slots_used=ct.slots_used,
        )

    def mul(self, a: SwheCiphertext, b: SwheCiphertext, evaluation_key: SwheEvaluationKey) -> SwheCiphertext:
        """Ciphertext product, relinearized back to two components; consumes one level."""
        self._check_keys(a.fingerprint, b.fingerprint, evaluation_key.fingerprint)
        level = max(a.level, b.level) + 1
        if level > self.params.max_depth:
            raise DepthExceededError(level, self.params.max_depth)

        q, t = self.q, self.t
        d0 = polyring.negacyclic_mul(a.c0, b.c0)
        d2 = polyring.negacyclic_mul(a.c1, b.c1)
        d1 = polyring.negacyclic_mul(a.c0 + a.c1, b.c0 + b.c1) - d0 - d2

        d0 = polyring.center(polyring.scale_round(d0, t, q), q)
        d1 = polyring.center(polyring.scale_round(d1, t, q), q)
        d2 = polyring.center(polyring.scale_round(d2, t, q), q)

        special = self.params.special_modulus
        relin0 = polyring.scale_round(polyring.negacyclic_mul(d2, evaluation_key.b), 1, special)
        relin1 = polyring.scale_round(polyring.negacyclic_mul(d2, evaluation_key.a), 1, special)

        return SwheCiphertext(
            c0=polyring.center(d0 + relin0, q),
            c1=polyring.center(d1 + relin1, q),
            fingerprint=a.fingerprint,
            level=level,
            noise_bits=self.params.noise_after_mul(a.noise_bits, b.noise_bits),
            slots_used=max(a.slots_used, b.slots_used),
        )

    # -- noise -----------------------------------------------------------------

    def noise_budget(self, ct: SwheCiphertext) -> int:
        return max(0, math.floor(self.params.decryption_bound_bits - ct.noise_bits))

    def measured_noise_budget(self, ct: SwheCiphertext, keys: SwheKeySet) -> int:
        """Remaining bits computed from the actual noise (needs the secret key)."""
        phase = self._phase(ct, keys)
        scaled = self.t * phase
        residual = scaled - self.q * polyring.scale_round(phase, self.t, self.q)
        worst = polyring.max_abs(residual)
        if worst == 0:
            return self.q.bit_length()
        return max(0, math.floor(math.log2(self.q) - math.log2(worst) - 1))

    # -- serialization ---------------------------------------------------------

    def _poly_bytes(self, poly: np.ndarray, modulus: int) -> bytes:
        width = (modulus.bit_length() + 7) // 8
        return b"".join((int(c) % modulus).to_bytes(width, "little") for c in poly)

    def _poly_from_bytes(self, data: bytes, offset: int, modulus: int) -> tuple[np.ndarray, int]:
        width = (modulus.bit_length() + 7) // 8
        end = offset + width * self.n
        if end > len(data):
            raise ValueError("truncated SWHE polynomial")
        coeffs = [int.from_bytes(data[i : i + width], "little") for i in range(offset, end, width)]
        return polyring.center(np.array(coeffs, dtype=object), modulus), end

    def serialize(self, ct: SwheCiphertext) -> bytes:
        header = CIPHERTEXT_MAGIC + self.params.params_id + ct.fingerprint
        header += struct.pack("<BdI", ct.level, ct.noise_bits, ct.slots_used)
        return header + self._poly_bytes(ct.c0, self.q) + self._poly_bytes(ct.c1, self.q)

    def deserialize(self, data: bytes, offset: int = 0) -> tuple[SwheCiphertext, int]:
        if data[offset : offset + 4] != CIPHERTEXT_MAGIC:
            raise ValueError("not an SWHE ciphertext")
        if data[offset + 4 : offset + 12] != self.params.params_id:
            raise ConfigurationError("SWHE ciphertext was produced under different parameters")
        fingerprint = bytes(data[offset + 12 : offset + 20])
        level, noise_bits, slots_used = struct.unpack_from("<BdI", data, offset + 20)
        offset += 20 + struct.calcsize("<BdI")
        c0, offset = self._poly_from_bytes(data, offset, self.q)
        c1, offset = self._poly_from_bytes(data, offset, self.q)
        return SwheCiphertext(c0, c1, fingerprint, level, noise_bits, slots_used), offset

    def serialize_evaluation_key(self, key: SwheEvaluationKey) -> bytes:
        big = self.params.special_modulus * self.q
        return self.params.params_id + key.fingerprint + self._poly_bytes(key.b, big) + self._poly_bytes(key.a, big)

    def deserialize_evaluation_key(self, data: bytes, offset: int = 0) -> tuple[SwheEvaluationKey, int]:
        if data[offset : offset + 8] != self.params.params_id:
            raise ConfigurationError("evaluation key was produced under different parameters")
        fingerprint = bytes(data[offset + 8 : offset + 16])
        big = self.params.special_modulus * self.q
        b, offset = self._poly_from_bytes(data, offset + 16, big)
        a, offset = self._poly_from_bytes(data, offset, big)
        return SwheEvaluationKey(b, a, fingerprint), offset
