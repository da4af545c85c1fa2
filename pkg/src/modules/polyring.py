"""
Big-integer arithmetic in Z[x]/(x^n + 1).

Polynomials are numpy object arrays of Python ints, coefficient i at index i.
Products go through Kronecker substitution: both operands are packed into one
GMP integer with fixed-width byte slots, multiplied once, unpacked, and folded
negacyclically (x^n = -1).
"""

from functools import lru_cache

import gmpy2
import numpy as np


def zeros(n: int) -> np.ndarray:
    return np.array([0] * n, dtype=object)


def as_poly(values, n: int | None = None) -> np.ndarray:
    coeffs = [int(v) for v in values]
    if n is not None:
        if len(coeffs) > n:
            raise ValueError(f"{len(coeffs)} coefficients do not fit degree bound {n}")
        coeffs.extend([0] * (n - len(coeffs)))
    return np.array(coeffs, dtype=object)


def center(poly: np.ndarray, modulus: int) -> np.ndarray:
    """Reduce into the symmetric range (-modulus/2, modulus/2]."""
    reduced = poly % modulus
    return np.where(reduced > modulus // 2, reduced - modulus, reduced)


def max_abs(poly: np.ndarray) -> int:
    return max((abs(int(c)) for c in poly), default=0)


@lru_cache(maxsize=64)
def _slot_constants(width_bytes: int, slots: int) -> tuple[int, int]:
    """(sum of 2^(w*i) for i < slots, 2^(w-1) times that), w = 8*width_bytes."""
    w = 8 * width_bytes
    ones = ((1 << (w * slots)) - 1) // ((1 << w) - 1)
    return ones, ones << (w - 1)


def _pack(poly: np.ndarray, width_bytes: int, offset: int) -> int:
    # every coefficient is shifted by ``offset`` to make the slot content nonnegative
    chunks = b"".join((int(c) + offset).to_bytes(width_bytes, "little") for c in poly)
    return int.from_bytes(chunks, "little")


def negacyclic_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact product of two signed polynomials modulo x^n + 1 (no coefficient reduction)."""
    n = len(a)
    if len(b) != n:
        raise ValueError(f"degree mismatch: {n} vs {len(b)}")

    bound_a, bound_b = max_abs(a), max_abs(b)
    if bound_a == 0 or bound_b == 0:
        return zeros(n)

    # each product coefficient is bounded by n * |a| * |b|; two guard bits for the signed offset
    width_bits = n.bit_length() + bound_a.bit_length() + bound_b.bit_length() + 2
    width_bytes = (width_bits + 7) // 8
    w = 8 * width_bytes
    half = 1 << (w - 2)

    ones_n, _ = _slot_constants(width_bytes, n)
    packed_a = gmpy2.mpz(_pack(a, width_bytes, half) - half * ones_n)
    packed_b = gmpy2.mpz(_pack(b, width_bytes, half) - half * ones_n)

    product = int(packed_a * packed_b)
    _, bias = _slot_constants(width_bytes, 2 * n)
    raw = (product + bias).to_bytes(2 * n * width_bytes, "little")

    shift = 1 << (w - 1)
    digits = [int.from_bytes(raw[i : i + width_bytes], "little") - shift for i in range(0, len(raw), width_bytes)]
    low = np.array(digits[:n], dtype=object)
    high = np.array(digits[n:], dtype=object)
    return low - high


def mul_mod(a: np.ndarray, b: np.ndarray, modulus: int) -> np.ndarray:
    return center(negacyclic_mul(a, b), modulus)


def scale_round(poly: np.ndarray, numerator: int, denominator: int) -> np.ndarray:
    """Coefficient-wise round(numerator * c / denominator), ties upward."""
    return (2 * numerator * poly + denominator) // (2 * denominator)


def sample_ternary(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.array([int(v) for v in rng.integers(-1, 2, size=n)], dtype=object)


def sample_gaussian(rng: np.random.Generator, n: int, sigma: float) -> np.ndarray:
    """Rounded Gaussian truncated at 6 sigma."""
    bound = 6.0 * sigma
    values = np.clip(np.rint(rng.normal(0.0, sigma, size=n)), -bound, bound)
    return np.array([int(v) for v in values], dtype=object)


def sample_uniform(rng: np.random.Generator, n: int, modulus: int) -> np.ndarray:
    nbytes = (modulus.bit_length() + 7) // 8 + 8
    raw = rng.bytes(nbytes * n)
    coeffs = [int.from_bytes(raw[i * nbytes : (i + 1) * nbytes], "little") % modulus for i in range(n)]
    return center(np.array(coeffs, dtype=object), modulus)
