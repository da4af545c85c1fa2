"""
Three-party recommendation protocol (user, RecSys, proxy).

The Reduction phase leaves additive shares: the user keeps r3_j and the RecSys ends
up with gamma_j = x_j + eps_j + r3_j (a pure mask for rated items). Each side turns
its share into a key-homomorphic PRF output on the per-item nonce R_j; the proxy
combines the two, giving Prf(K_j + x_j + eps_j, R_j), and matches its hash against
the user's check values Prf(K_j + V, R_j). Positions are shuffled by a permutation
only the user and the RecSys know.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from modules.counters import PAILLIER_DEC, PRF_EVAL, PRF_HADD, PROXY, RECSYS, USER, OpCounters
from modules.khprf import KhPrf, PrfKey, PrfOutput, random_key
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
from utils.errors import PlaintextRangeError, ProtocolError
from utils.randomness import fisher_yates, make_rng, random_bits

logger = logging.getLogger(__name__)

NONCE_BYTES = 32


def permute(values: list, perm: list[int]) -> list:
    """out[p] = values[perm[p]]."""
    return [values[i] for i in perm]


@dataclass(frozen=True)
class ProxySharedSetup:
    """Nonces and permutations shared by the user and the RecSys, never by the proxy."""

    nonces: tuple[bytes, ...]
    outer: tuple[int, ...]
    inner: tuple[tuple[int, ...], ...]
    session_id: bytes = b""

    @classmethod
    def derive(cls, seed: int | None, items: int, thresholds: int, session_id: bytes = b"") -> "ProxySharedSetup":
        rng = make_rng(seed, "proxy", "shared-setup")
        nonces = tuple(rng.bytes(NONCE_BYTES) for _ in range(items))
        outer = tuple(fisher_yates(rng, items))
        inner = tuple(tuple(fisher_yates(rng, thresholds)) for _ in range(items))
        return cls(nonces, outer, inner, session_id)

    @property
    def items(self) -> int:
        return len(self.nonces)


@dataclass
class ProxyUser:
    spec: FixedPointSpec
    paillier_keys: PaillierKeyPair
    rated: list[bool]
    setup: ProxySharedSetup
    rng: np.random.Generator
    prf: KhPrf = field(default_factory=KhPrf)
    ops: OpCounters = field(default_factory=lambda: OpCounters(USER))
    share_masks: list[int] = field(default_factory=list)
    prf_keys: list[PrfKey] = field(default_factory=list)

    def reduction_reply(self, masked: list[PaillierCiphertext]) -> list[int]:
        """Decrypt, drop the low part and the public lift, and re-mask with a fresh r3."""
        if len(masked) != len(self.rated):
            raise ProtocolError(f"expected {len(self.rated)} masked predictions, got {len(masked)}")
        gammas = []
        self.share_masks = []
        for j, ct in enumerate(masked):
            try:
                alpha = decrypt_masked(ct, self.paillier_keys, self.spec)
            except PlaintextRangeError as e:
                raise ProtocolError(f"item {j}: {e}") from e
            self.ops.bump(PAILLIER_DEC)
            r3 = random_bits(self.rng, self.spec.share_mask_bits)
            self.share_masks.append(r3)
            if self.rated[j]:
                gammas.append(r3)
            else:
                gammas.append(r3 + unmask_round(alpha, self.spec.unit) - self.spec.lift)
        return gammas

    def prf_shares(self, session_id: bytes = b"") -> list[PrfOutput]:
        if session_id != self.setup.session_id:
            raise ProtocolError("shared setup belongs to a different session")
        if len(self.share_masks) != self.setup.items:
            raise ProtocolError("reduction has not completed for every item")
        self.prf_keys = [random_key(self.rng, self.spec.share_mask_bits) for _ in range(self.setup.items)]
        shares = [
            self.prf.evaluate(key.sub(r3), nonce)
            for key, r3, nonce in zip(self.prf_keys, self.share_masks, self.setup.nonces)
        ]
        self.ops.bump(PRF_EVAL, len(shares))
        return permute(shares, list(self.setup.outer))

    def check_values(self, thresholds: ThresholdSet) -> list[list[bytes]]:
        rows = []
        for j, (key, nonce) in enumerate(zip(self.prf_keys, self.setup.nonces)):
            row = [self.prf.check(self.prf.evaluate(key.add(v), nonce)) for v in thresholds.values]
            self.ops.bump(PRF_EVAL, len(row))
            rows.append(permute(row, list(self.setup.inner[j])))
        return permute(rows, list(self.setup.outer))

    def interpret(self, bits: list[int]) -> set[int]:
        if len(bits) != self.setup.items:
            raise ProtocolError(f"match result has {len(bits)} bits for {self.setup.items} items")
        return {item for p, item in enumerate(self.setup.outer) if bits[p] and not self.rated[item]}


@dataclass
class ProxyRecSys:
    spec: FixedPointSpec
    setup: ProxySharedSetup
    rng: np.random.Generator
    r2_rng: np.random.Generator
    prf: KhPrf = field(default_factory=KhPrf)
    max_x: int = 60
    ops: OpCounters = field(default_factory=lambda: OpCounters(RECSYS))
    record: ReductionRecord = field(default_factory=ReductionRecord)
    gammas: list[int] = field(default_factory=list)

    def reduction(self, predictions: list[PaillierCiphertext], pk: PaillierPublicKey) -> list[PaillierCiphertext]:
        check_mask_guard(pk, self.spec, self.max_x)
        masked = []
        for ct in predictions:
            entry = draw_reduction_entry(self.rng, self.r2_rng, self.spec)
            self.record.entries.append(entry)
            masked.append(mask_for_reduction(ct, "-", self.spec, pk, entry, self.ops))
        return masked

    def receive_gammas(self, gammas: list[int]) -> None:
        if len(gammas) != len(self.record):
            raise ProtocolError(f"expected {len(self.record)} shares, got {len(gammas)}")
        self.gammas = [gamma + entry.r1 for gamma, entry in zip(gammas, self.record.entries)]

    def prf_shares(self, session_id: bytes = b"") -> list[PrfOutput]:
        if session_id != self.setup.session_id:
            raise ProtocolError("shared setup belongs to a different session")
        shares = [self.prf.evaluate(PrfKey.of(gamma), nonce) for gamma, nonce in zip(self.gammas, self.setup.nonces)]
        self.ops.bump(PRF_EVAL, len(shares))
        return permute(shares, list(self.setup.outer))


@dataclass
class ProxyView:
    user_shares: list[PrfOutput] = field(default_factory=list)
    recsys_shares: list[PrfOutput] = field(default_factory=list)
    combined: list[PrfOutput] = field(default_factory=list)
    checks: list[list[bytes]] = field(default_factory=list)
    result: list[int] = field(default_factory=list)

    @property
    def match_count(self) -> int:
        return sum(self.result)

    def shape(self) -> tuple[int, int, int, tuple[int, ...], int]:
        return (
            len(self.user_shares),
            len(self.recsys_shares),
            len(self.combined),
            tuple(len(row) for row in self.checks),
            self.match_count,
        )


class ProxyParty:
    """Joins the two share vectors and the check values, whatever order they arrive in."""

    def __init__(self, prf: KhPrf | None = None):
        self.prf = prf or KhPrf()
        self.ops = OpCounters(PROXY)
        self.view = ProxyView()
        self._user: list[PrfOutput] | None = None
        self._recsys: list[PrfOutput] | None = None
        self._checks: list[list[bytes]] | None = None

    def accept_user_shares(self, shares: list[PrfOutput]) -> None:
        self._user = shares
        self.view.user_shares = shares

    def accept_recsys_shares(self, shares: list[PrfOutput]) -> None:
        self._recsys = shares
        self.view.recsys_shares = shares

    def accept_check_values(self, checks: list[list[bytes]]) -> None:
        self._checks = checks
        self.view.checks = checks

    @property
    def ready(self) -> bool:
        return self._user is not None and self._recsys is not None and self._checks is not None

    def combine(self, user: list[PrfOutput], recsys: list[PrfOutput]) -> list[PrfOutput]:
        if len(user) != len(recsys):
            raise ProtocolError(f"share vectors differ in length: {len(user)} vs {len(recsys)}")
        combined = [self.prf.combine(a, b) for a, b in zip(user, recsys)]
        self.ops.bump(PRF_HADD, len(combined))
        return combined

    def match(self, combined: list[PrfOutput], checks: list[list[bytes]]) -> list[int]:
        if len(combined) != len(checks):
            raise ProtocolError(f"{len(combined)} combined outputs but {len(checks)} check rows")
        return [1 if self.prf.check(xi) in set(row) else 0 for xi, row in zip(combined, checks)]

    def finish(self) -> list[int]:
        if not self.ready:
            raise ProtocolError("proxy is still waiting for shares or check values")
        self.view.combined = self.combine(self._user, self._recsys)
        self.view.result = self.match(self.view.combined, self._checks)
        logger.debug(f"Proxy matched {self.view.match_count} of {len(self.view.result)} positions")
        return self.view.result
