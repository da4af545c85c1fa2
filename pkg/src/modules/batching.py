"""
CRT slot batching for the plaintext ring Z_t[x]/(x^n + 1) with t = p1 * p2.

Each prime splits x^n + 1 into linear factors (p = 1 mod 2n), so a plaintext
polynomial is the same thing as n slot values mod p1 and n slot values mod p2:
its evaluations at the odd powers of a primitive 2n-th root of unity.
Combining the two residues per slot by CRT gives n slots mod t.
"""

import logging
from functools import lru_cache

import numpy as np

from utils.errors import ConfigurationError, PlaintextRangeError

logger = logging.getLogger(__name__)

DEFAULT_PRIMES = (1099511922689, 1099512004609)


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    indices = np.arange(n)
    reversed_indices = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        reversed_indices |= ((indices >> b) & 1) << (bits - 1 - b)
    return reversed_indices


def _quadratic_nonresidue(p: int) -> int:
    g = 2
    while pow(g, (p - 1) // 2, p) != p - 1:
        g += 1
    return g


class NegacyclicTransform:
    """Forward/inverse negacyclic NTT of length n modulo a prime p = 1 (mod 2n)."""

    def __init__(self, n: int, p: int):
        if (p - 1) % (2 * n) != 0:
            raise ConfigurationError(f"prime {p} does not support batching at degree {n} (needs p = 1 mod {2 * n})")
        self.n = n
        self.p = p
        # a non-residue g gives an element of order exactly 2n as g^((p-1)/2n)
        self.psi = pow(_quadratic_nonresidue(p), (p - 1) // (2 * n), p)
        self.psi_inv = pow(self.psi, -1, p)
        self.n_inv = pow(n, -1, p)
        self.omega = self.psi * self.psi % p
        self.omega_inv = pow(self.omega, -1, p)

        self.psi_powers = self._powers(self.psi)
        self.psi_inv_powers = self._powers(self.psi_inv)
        self.bitrev = _bit_reverse_indices(n)
        self.stage_twiddles = self._twiddles(self.omega)
        self.stage_twiddles_inv = self._twiddles(self.omega_inv)

    def _powers(self, base: int) -> np.ndarray:
        out = [1] * self.n
        for i in range(1, self.n):
            out[i] = out[i - 1] * base % self.p
        return np.array(out, dtype=object)

    def _twiddles(self, root: int) -> list[np.ndarray]:
        stages = []
        m = 2
        while m <= self.n:
            w_m = pow(root, self.n // m, self.p)
            row = [1] * (m // 2)
            for j in range(1, m // 2):
                row[j] = row[j - 1] * w_m % self.p
            stages.append(np.array(row, dtype=object))
            m *= 2
        return stages

    def _cyclic(self, values: np.ndarray, twiddles: list[np.ndarray]) -> np.ndarray:
        a = values[self.bitrev]
        m = 2
        for stage in twiddles:
            half = m // 2
            blocks = a.reshape(-1, m)
            u = blocks[:, :half]
            v = (blocks[:, half:] * stage) % self.p
            a = np.concatenate([(u + v) % self.p, (u - v) % self.p], axis=1).reshape(-1)
            m *= 2
        return a

    def forward(self, coeffs: np.ndarray) -> np.ndarray:
        """Coefficients mod p -> slot values m(psi^(2k+1)) mod p."""
        return self._cyclic((coeffs * self.psi_powers) % self.p, self.stage_twiddles)

    def inverse(self, slots: np.ndarray) -> np.ndarray:
        coeffs = self._cyclic(slots % self.p, self.stage_twiddles_inv)
        return (coeffs * self.n_inv % self.p) * self.psi_inv_powers % self.p


@lru_cache(maxsize=8)
def _transform(n: int, p: int) -> NegacyclicTransform:
    return NegacyclicTransform(n, p)


class SlotEncoder:
    """Maps slot vectors mod t to plaintext polynomials (centered mod t) and back."""

    def __init__(self, n: int, primes: tuple[int, int] = DEFAULT_PRIMES):
        self.n = n
        self.primes = primes
        self.t = primes[0] * primes[1]
        self.transforms = [_transform(n, p) for p in primes]
        p1, p2 = primes
        self._p1_inv_mod_p2 = pow(p1, -1, p2)

    @property
    def slot_count(self) -> int:
        return self.n

    def _crt(self, r1: np.ndarray, r2: np.ndarray) -> np.ndarray:
        p1, p2 = self.primes
        return r1 + p1 * (((r2 - r1) * self._p1_inv_mod_p2) % p2)

    def crt(self, r1: int, r2: int) -> int:
        """The value mod t with residues r1 mod p1 and r2 mod p2."""
        p1, p2 = self.primes
        r1 %= p1
        return r1 + p1 * (((r2 - r1) * self._p1_inv_mod_p2) % p2)

    def encode(self, values) -> np.ndarray:
        """Slot values in [0, t) (fewer than n are zero-padded) -> plaintext polynomial."""
        slots = [int(v) for v in values]
        if len(slots) > self.n:
            raise PlaintextRangeError(f"{len(slots)} values exceed the {self.n} available slots")
        for v in slots:
            if not 0 <= v < self.t:
                raise PlaintextRangeError(f"slot value {v} outside [0, t)")
        slots.extend([0] * (self.n - len(slots)))
        vector = np.array(slots, dtype=object)

        residues = [tr.inverse(vector % tr.p) for tr in self.transforms]
        coeffs = self._crt(*residues)
        return np.where(coeffs > self.t // 2, coeffs - self.t, coeffs)

    def decode(self, poly: np.ndarray) -> list[int]:
        reduced = poly % self.t
        residues = [tr.forward(reduced % tr.p) for tr in self.transforms]
        return [int(v) for v in self._crt(*residues)]
