"""
Two-party recommendation protocol (user and RecSys, no third party).

Reduction: the RecSys masks each encrypted prediction, the user decrypts, drops the
low part, and returns the masked x + epsilon under its own SWHE key (a fresh random
for rated items). Evaluation: the RecSys strips the mask, multiplies the differences
to every threshold value, and hides non-zero results with a random unit; the user
keeps the items that decrypt to zero.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from modules.counters import (
    PAILLIER_DEC,
    RECSYS,
    SWHE_ADD,
    SWHE_DEC,
    SWHE_ENC,
    SWHE_MUL,
    SWHE_MUL_PARTIAL,
    USER,
    OpCounters,
)
from modules.paillier import PaillierCiphertext, PaillierKeyPair, PaillierPublicKey
from modules.protocol_common import (
    FixedPointSpec,
    ReductionRecord,
    ThresholdSet,
    check_mask_guard,
    decrypt_masked,
    draw_reduction_entry,
    mask_for_reduction,
    unmask_round,
)
from modules.swhe import SwheCiphertext, SwheContext, SwheEvaluationKey, SwheKeySet
from utils.errors import PlaintextRangeError, ProtocolError
from utils.randomness import random_bits, random_unit_mod

logger = logging.getLogger(__name__)


def batch_ranges(items: int, slots: int, batched: bool) -> list[range]:
    """Item index ranges, one per SWHE ciphertext."""
    width = slots if batched else 1
    return [range(start, min(start + width, items)) for start in range(0, items, width)]


@dataclass
class NoProxyUser:
    spec: FixedPointSpec
    context: SwheContext
    paillier_keys: PaillierKeyPair
    swhe_keys: SwheKeySet
    rated: list[bool]
    rng: np.random.Generator
    batched: bool = True
    ops: OpCounters = field(default_factory=lambda: OpCounters(USER))
    betas: dict[int, int] = field(default_factory=dict)
    decisions: dict[int, bool] = field(default_factory=dict)

    @property
    def evaluation_key(self) -> SwheEvaluationKey:
        return self.swhe_keys.evaluation_key

    def reduction_reply(self, masked: list[PaillierCiphertext]) -> list[SwheCiphertext]:
        if len(masked) != len(self.rated):
            raise ProtocolError(f"expected {len(self.rated)} masked predictions, got {len(masked)}")

        slot_values = []
        for j, ct in enumerate(masked):
            try:
                alpha = decrypt_masked(ct, self.paillier_keys, self.spec)
            except PlaintextRangeError as e:
                raise ProtocolError(f"item {j}: {e}") from e
            self.ops.bump(PAILLIER_DEC)
            if self.rated[j]:
                slot_values.append(random_bits(self.rng, self.spec.lambda_bits))
            else:
                beta = unmask_round(alpha, self.spec.unit)
                self.betas[j] = beta
                slot_values.append(beta)

        replies = []
        for batch in batch_ranges(len(masked), self.context.slot_count, self.batched):
            vector = self.context.encode([slot_values[j] for j in batch])
            replies.append(self.context.encrypt(vector, self.swhe_keys, self.rng, slots_used=len(batch)))
            self.ops.bump(SWHE_ENC, len(batch))
        logger.debug(f"User reduced {len(masked)} predictions into {len(replies)} SWHE ciphertexts")
        return replies

    def select(self, results: list[SwheCiphertext]) -> set[int]:
        batches = batch_ranges(len(self.rated), self.context.slot_count, self.batched)
        if len(results) != len(batches):
            raise ProtocolError(f"expected {len(batches)} evaluation ciphertexts, got {len(results)}")

        recommended = set()
        for batch, ct in zip(batches, results):
            values = self.context.decode(self.context.decrypt(ct, self.swhe_keys), len(batch))
            self.ops.bump(SWHE_DEC)
            for j, value in zip(batch, values):
                self.decisions[j] = value == 0
                # rated items never leave the device, whatever their slot says
                if value == 0 and not self.rated[j]:
                    recommended.add(j)
        return recommended


@dataclass
class NoProxyRecSys:
    spec: FixedPointSpec
    thresholds: ThresholdSet
    context: SwheContext
    rng: np.random.Generator
    r2_rng: np.random.Generator
    batched: bool = True
    max_x: int = 60
    ops: OpCounters = field(default_factory=lambda: OpCounters(RECSYS))
    record: ReductionRecord = field(default_factory=ReductionRecord)

    def reduction(self, predictions: list[PaillierCiphertext], pk: PaillierPublicKey) -> list[PaillierCiphertext]:
        check_mask_guard(pk, self.spec, self.max_x)
        masked = []
        for ct in predictions:
            entry = draw_reduction_entry(self.rng, self.r2_rng, self.spec)
            self.record.entries.append(entry)
            masked.append(mask_for_reduction(ct, "+", self.spec, pk, entry, self.ops))
        return masked

    def _rand_vector(self, width: int) -> list[int]:
        p1, p2 = self.context.params.plain_primes
        encoder = self.context.encoder
        return [encoder.crt(random_unit_mod(self.rng, p1), random_unit_mod(self.rng, p2)) for _ in range(width)]

    def _membership_product(self, diffs: list[SwheCiphertext], key: SwheEvaluationKey, width: int) -> SwheCiphertext:
        # balanced pairing keeps the depth at ceil(log2 T)
        level = diffs
        while len(level) > 1:
            paired = []
            for i in range(0, len(level) - 1, 2):
                paired.append(self.context.mul(level[i], level[i + 1], key))
                self.ops.bump(SWHE_MUL, width)
            if len(level) % 2:
                paired.append(level[-1])
            level = paired
        return level[0]

    def evaluate(self, replies: list[SwheCiphertext], key: SwheEvaluationKey) -> list[SwheCiphertext]:
        items = len(self.record)
        batches = batch_ranges(items, self.context.slot_count, self.batched)
        if len(replies) != len(batches):
            raise ProtocolError(f"expected {len(batches)} reduction replies, got {len(replies)}")

        results = []
        for batch, gamma in zip(batches, replies):
            width = len(batch)
            phi = self.context.sub_plain(gamma, self.context.encode([self.record.r1(j) for j in batch]))
            self.ops.bump(SWHE_ADD, width)

            diffs = []
            for v in self.thresholds.values:
                diffs.append(self.context.sub_plain(phi, self.context.encode([v] * width)))
                self.ops.bump(SWHE_ADD, width)

            omega = self._membership_product(diffs, key, width)
            psi = self.context.mul_plain(omega, self.context.encode(self._rand_vector(width)))
            self.ops.bump(SWHE_MUL_PARTIAL, width)
            results.append(psi)

        logger.debug(
            f"RecSys evaluated {items} items in {len(batches)} ciphertexts, "
            f"noise budget left {min((self.context.noise_budget(ct) for ct in results), default=0)} bits"
        )
        return results


def expected_ciphertexts(items: int, slots: int, batched: bool) -> int:
    return math.ceil(items / slots) if batched else items
