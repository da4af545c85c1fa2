"""
Arithmetic shared by both recommendation protocols.

A prediction is carried as the integer x * unit + y with 0 <= y < unit, where x
counts tenths of a star and unit = theta << precision_bits. The Reduction phase
masks that integer under Paillier, lets the user drop the y part, and leaves x
plus a rounding carry epsilon in {0, 1} behind a mask.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np

from modules import paillier
from modules.counters import PAILLIER_ADD, PAILLIER_ENC, OpCounters
from modules.expert_model import EncryptedProfile, ExpertModelParams, ScaledModel
from modules.paillier import PaillierCiphertext, PaillierKeyPair, PaillierPublicKey
from utils.errors import ConfigurationError, PlaintextRangeError
from utils.randomness import random_below, random_bits

logger = logging.getLogger(__name__)

MAX_THRESHOLDS = 4
STATISTICAL_MARGIN_BITS = 40
MIN_PREDICTION_PRECISION_BITS = 16


@dataclass(frozen=True)
class FixedPointSpec:
    theta: int = 1000
    granularity: int = 10
    precision_bits: int = 0
    lambda_bits: int = 40

    def __post_init__(self):
        if self.theta < 2:
            raise ConfigurationError(f"theta must be at least 2, got {self.theta}")
        if self.granularity < 1:
            raise ConfigurationError("granularity must be a positive number of x-units per star")
        if self.precision_bits < 0 or self.lambda_bits < 1:
            raise ConfigurationError("precision_bits must be >= 0 and lambda_bits >= 1")

    @classmethod
    def from_config(cls, config: dict[str, Any]) -> "FixedPointSpec":
        section = config.get("fixed_point", {})
        return cls(
            theta=int(section.get("theta", 1000)),
            granularity=int(section.get("granularity", 10)),
            precision_bits=int(section.get("precision_bits", 0)),
            lambda_bits=int(section.get("lambda_bits", 40)),
        )

    @property
    def unit(self) -> int:
        """Size of one x step in the encoded integer."""
        return self.theta << self.precision_bits

    @property
    def scale(self) -> int:
        """Encoded integer per star."""
        return self.granularity * self.unit

    @property
    def lift(self) -> int:
        """Public offset L keeping the subtractive masking non-negative."""
        return 1 << self.lambda_bits

    @property
    def reduction_bound(self) -> int:
        """Masked values at or above this are treated as tampering or wraparound."""
        return (1 << (self.lambda_bits + 1)) * self.unit

    @property
    def share_mask_bits(self) -> int:
        return 3 * self.lambda_bits


@dataclass(frozen=True)
class ThresholdSet:
    """Distinct x values, sorted descending."""

    values: tuple[int, ...]

    def __post_init__(self):
        if not self.values:
            raise ConfigurationError("threshold set must contain at least one value")
        if len(set(self.values)) != len(self.values):
            raise ConfigurationError(f"threshold values must be distinct: {self.values}")
        if list(self.values) != sorted(self.values, reverse=True):
            raise ConfigurationError(f"threshold values must be sorted descending: {self.values}")
        if any(v < 0 for v in self.values):
            raise ConfigurationError("threshold values cannot be negative")

    def __len__(self) -> int:
        return len(self.values)

    def __contains__(self, x: int) -> bool:
        return x in self.values

    @classmethod
    def from_values(cls, values, max_thresholds: int = MAX_THRESHOLDS) -> "ThresholdSet":
        ordered = tuple(sorted({int(v) for v in values}, reverse=True))
        if len(ordered) > max_thresholds:
            raise ConfigurationError(f"at most {max_thresholds} threshold values are supported, got {len(ordered)}")
        return cls(ordered)

    @classmethod
    def parse(cls, text: str, spec: FixedPointSpec, max_thresholds: int = MAX_THRESHOLDS) -> "ThresholdSet":
        """Parse '5.0,4.9' (stars) into x units at the spec's granularity."""
        values = []
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            try:
                stars = Fraction(part)
            except ValueError:
                raise ConfigurationError(f"threshold '{part}' is not a number") from None
            units = stars * spec.granularity
            if units.denominator != 1:
                raise ConfigurationError(f"threshold {part} is finer than 1/{spec.granularity} star")
            values.append(int(units))
        if len(values) != len(set(values)):
            raise ConfigurationError(f"duplicate threshold values in '{text}'")
        return cls.from_values(values, max_thresholds)

    def as_stars(self, spec: FixedPointSpec) -> list[float]:
        return [v / spec.granularity for v in self.values]


@dataclass
class ReductionEntry:
    r1: int
    r2: int


@dataclass
class ReductionRecord:
    """The RecSys's private masks, one entry per item."""

    entries: list[ReductionEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def r1(self, j: int) -> int:
        return self.entries[j].r1

    def r2(self, j: int) -> int:
        return self.entries[j].r2


# -- encoding --------------------------------------------------------------------


def encode_value(estimate: float, spec: FixedPointSpec, max_rating: int = 5) -> int:
    if estimate is None or math.isnan(estimate):
        raise PlaintextRangeError("cannot encode a NaN prediction")
    clamped = min(max(estimate, 0.0), float(max_rating + 1))
    return round(Fraction(clamped) * spec.scale)


def encode_prediction(estimate: float, spec: FixedPointSpec, max_rating: int = 5) -> tuple[int, int]:
    """(x, y) with x * unit + y = round(estimate * scale) after clamping to [0, max_rating + 1]."""
    return divmod(encode_value(estimate, spec, max_rating), spec.unit)


def carry(y: int, r2: int, spec: FixedPointSpec) -> int:
    return 1 if y + r2 >= spec.unit else 0


def unmask_round(alpha: int, unit: int) -> int:
    if alpha < 0:
        raise PlaintextRangeError("masked value must be non-negative")
    return alpha // unit


def masked_plaintext(value: int, entry: ReductionEntry, sign: str, spec: FixedPointSpec) -> int:
    """What the user decrypts from a masked prediction, computed in the clear."""
    if sign == "+":
        return value + entry.r1 * spec.unit + entry.r2
    if sign == "-":
        return value + spec.lift * spec.unit - entry.r1 * spec.unit + entry.r2
    raise ValueError(f"sign must be '+' or '-', got {sign!r}")


def check_mask_guard(pk: PaillierPublicKey, spec: FixedPointSpec, max_x: int) -> None:
    """Masked plaintexts must stay far below n so nothing wraps."""
    top = (max_x + spec.lift + (1 << spec.lambda_bits) + 1) * spec.unit
    if top.bit_length() + STATISTICAL_MARGIN_BITS >= pk.bits:
        raise ConfigurationError(
            f"masked values need {top.bit_length()} bits plus a {STATISTICAL_MARGIN_BITS}-bit margin, "
            f"but the Paillier modulus has {pk.bits} bits"
        )


def draw_reduction_entry(rng: np.random.Generator, r2_rng: np.random.Generator, spec: FixedPointSpec) -> ReductionEntry:
    return ReductionEntry(r1=random_bits(rng, spec.lambda_bits), r2=random_below(r2_rng, spec.unit))


def mask_for_reduction(
    ct: PaillierCiphertext,
    sign: str,
    spec: FixedPointSpec,
    pk: PaillierPublicKey,
    entry: ReductionEntry,
    ops: OpCounters | None = None,
) -> PaillierCiphertext:
    """Homomorphically apply the Reduction mask as a single plaintext addition."""
    if sign == "+":
        offset = entry.r1 * spec.unit + entry.r2
    elif sign == "-":
        offset = spec.lift * spec.unit - entry.r1 * spec.unit + entry.r2
    else:
        raise ValueError(f"sign must be '+' or '-', got {sign!r}")
    if ops is not None:
        ops.bump(PAILLIER_ADD)
    return paillier.add_plain(ct, offset, pk)


def decrypt_masked(ct: PaillierCiphertext, keys: PaillierKeyPair, spec: FixedPointSpec) -> int:
    alpha = paillier.dec(ct, keys)
    if alpha >= spec.reduction_bound:
        raise PlaintextRangeError(
            f"masked value of {alpha.bit_length()} bits exceeds the {spec.reduction_bound.bit_length()}-bit bound"
        )
    return alpha


# -- oracle ----------------------------------------------------------------------


def oracle_recommend(
    x_values: list[int], rated: list[bool], thresholds: ThresholdSet, epsilons: list[int]
) -> set[int]:
    """Items a perfect protocol returns: unrated j with x_j + eps_j in the threshold set."""
    return {j for j, x in enumerate(x_values) if not rated[j] and x + epsilons[j] in thresholds}


def sandwich_bounds(x_values: list[int], rated: list[bool], thresholds: ThresholdSet) -> tuple[set[int], set[int]]:
    """(items that must be returned, items that may be returned) whatever the carries."""
    lower = {j for j, x in enumerate(x_values) if not rated[j] and x in thresholds and x + 1 in thresholds}
    upper = {j for j, x in enumerate(x_values) if not rated[j] and (x in thresholds or x + 1 in thresholds)}
    return lower, upper


# -- model scaling and the encrypted profile -------------------------------------


def scale_model(params: ExpertModelParams, spec: FixedPointSpec) -> ScaledModel:
    """Integer constants for the encrypted prediction at the spec's scale.

    A and Q get roughly the square root of the scale each, so the two roundings
    contribute comparable and small errors.
    """
    if spec.precision_bits < MIN_PREDICTION_PRECISION_BITS:
        raise ConfigurationError(
            f"encrypted predictions need fixed_point.precision_bits >= {MIN_PREDICTION_PRECISION_BITS}"
        )
    scale = spec.scale
    a_bits = scale.bit_length() // 2
    if scale % (1 << a_bits):
        raise ConfigurationError("scale is not divisible by the chosen factor scale; raise precision_bits")
    a_scale = 1 << a_bits
    q_scale = scale >> a_bits

    base = params.stats.item_bias + params.avg_user_star_bias + params.item_star_bias
    return ScaledModel(
        scale=scale,
        a_scale=a_scale,
        q_scale=q_scale,
        item_offset=[round(Fraction(float(v)) * scale) for v in base],
        A=[[round(float(v) * a_scale) for v in row] for row in params.A],
        Q=[[round(float(v) * q_scale) for v in row] for row in params.Q],
    )


def encrypt_profile(
    ratings: np.ndarray,
    mean: float,
    spec: FixedPointSpec,
    pk: PaillierPublicKey,
    rng: np.random.Generator | None = None,
    ops: OpCounters | None = None,
) -> EncryptedProfile:
    values = [int(r) for r in ratings]
    mean_scaled = round(Fraction(float(mean)) * spec.scale)
    if mean_scaled < 0:
        raise PlaintextRangeError("profile mean must be non-negative")
    cts = [paillier.enc(v, pk, rng) for v in values]
    mean_ct = paillier.enc(mean_scaled, pk, rng)
    if ops is not None:
        ops.bump(PAILLIER_ENC, len(cts) + 1)
    return EncryptedProfile(ratings=cts, mean=mean_ct, scale=spec.scale)


# -- masked key switch through a third party --------------------------------------


class RekeyProxy:
    """Decrypts under key A and re-encrypts under key B; records every plaintext it sees."""

    def __init__(self, keys_a: PaillierKeyPair, pk_b: PaillierPublicKey, rng: np.random.Generator | None = None):
        self.keys_a = keys_a
        self.pk_b = pk_b
        self.rng = rng
        self.observed: list[int] = []

    def reencrypt(self, ct: PaillierCiphertext) -> PaillierCiphertext:
        value = paillier.dec(ct, self.keys_a)
        self.observed.append(value)
        return paillier.enc(value, self.pk_b, self.rng)


def rekey_masked(
    ct: PaillierCiphertext,
    pk_a: PaillierPublicKey,
    proxy: RekeyProxy,
    max_plaintext: int,
    spec: FixedPointSpec,
    rng: np.random.Generator,
    mask: int | None = None,
) -> PaillierCiphertext:
    """Move ``ct`` from key A to the proxy's key B without showing the proxy the plaintext.

    The requester adds a mask drawn from [0, 2^(bits(max_plaintext) + lambda)), the proxy
    switches keys, and the requester subtracts the mask again under B.
    """
    mask_bits = max(1, max_plaintext.bit_length()) + spec.lambda_bits
    ceiling = (max_plaintext + (1 << mask_bits)).bit_length()
    if ceiling >= min(pk_a.bits, proxy.pk_b.bits):
        raise ConfigurationError(f"masked plaintexts of {ceiling} bits would wrap a Paillier modulus")
    if mask is None:
        mask = random_bits(rng, mask_bits)

    masked = paillier.add_plain(ct, mask, pk_a, rng)
    switched = proxy.reencrypt(masked)
    return paillier.sub_plain(switched, mask, proxy.pk_b, rng)


def audit_rekey_leakage(proxy: RekeyProxy, plaintexts: list[int]) -> list[int]:
    """Positions where the proxy saw a true plaintext instead of a masked one."""
    return [i for i, (seen, true) in enumerate(zip(proxy.observed, plaintexts)) if seen == true]
