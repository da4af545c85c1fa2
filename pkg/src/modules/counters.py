"""
Per-party operation counters and the closed-form counts they must match.

Counts are slot-level: a batched SWHE operation over k packed items counts k,
so the numbers line up with per-item complexity accounting. SWHE decryptions
are the exception and count physical ciphertexts.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

from utils.errors import ConfigurationError, CounterMismatchError

logger = logging.getLogger(__name__)

USER = "User"
RECSYS = "RecSys"
PROXY = "Proxy"
PARTIES = (USER, RECSYS, PROXY)

PAILLIER_ENC = "Paillier.Enc"
PAILLIER_DEC = "Paillier.Dec"
PAILLIER_ADD = "Paillier.Add"
PAILLIER_SCALAR_MUL = "Paillier.ScalarMul"
SWHE_ENC = "SWHE.Enc"
SWHE_DEC = "SWHE.Dec"
SWHE_MUL = "SWHE.Mul"
SWHE_MUL_PARTIAL = "SWHE.MulPartial"
SWHE_ADD = "SWHE.Add"
PRF_EVAL = "Prf.Evaluate"
PRF_HADD = "Prf.Hadd"

OPERATIONS = (
    PAILLIER_ENC,
    PAILLIER_DEC,
    PAILLIER_ADD,
    PAILLIER_SCALAR_MUL,
    SWHE_ENC,
    SWHE_DEC,
    SWHE_MUL,
    SWHE_MUL_PARTIAL,
    SWHE_ADD,
    PRF_EVAL,
    PRF_HADD,
)


@dataclass
class OpCounters:
    """Counts for one party. Only ever incremented within a session."""

    party: str
    counts: Counter = field(default_factory=Counter)

    def bump(self, op: str, amount: int = 1) -> None:
        if op not in OPERATIONS:
            raise ValueError(f"unknown operation '{op}'")
        if amount < 0:
            raise ValueError("counters never decrease")
        self.counts[op] += amount

    def get(self, op: str) -> int:
        return self.counts.get(op, 0)

    def as_dict(self) -> dict[str, int]:
        return {op: self.counts[op] for op in OPERATIONS if self.counts.get(op)}


@dataclass
class SessionCounters:
    """Protocol counters per party, plus a separate set for preparation work."""

    parties: dict[str, OpCounters] = field(default_factory=lambda: {p: OpCounters(p) for p in PARTIES})
    preparation: dict[str, OpCounters] = field(default_factory=lambda: {p: OpCounters(p) for p in PARTIES})
    # SWHE ciphertexts the user sends back in REDUCE_REPLY; zero for proxy sessions
    physical_ciphertexts: int = 0

    def __getitem__(self, party: str) -> OpCounters:
        return self.parties[party]

    def merge(self, party: str, counters: OpCounters, preparation: bool = False) -> None:
        target = (self.preparation if preparation else self.parties)[party]
        target.counts.update(counters.counts)

    def as_dict(self) -> dict[str, dict[str, int]]:
        return {party: counters.as_dict() for party, counters in self.parties.items()}


def expected_counts(protocol: str, items: int, thresholds: int, slots: int | None = None) -> dict[str, dict[str, int]]:
    """Closed-form protocol counts for M items and T thresholds.

    ``slots`` is the number of slots per SWHE ciphertext (None means one item per ciphertext).
    """
    m, t = items, thresholds
    if protocol == "noproxy":
        decryptions = m if not slots else math.ceil(m / slots)
        expected = {
            USER: {PAILLIER_DEC: m, SWHE_ENC: m, SWHE_DEC: decryptions},
            RECSYS: {PAILLIER_ADD: m, SWHE_MUL: m * (t - 1), SWHE_MUL_PARTIAL: m, SWHE_ADD: m * (t + 1)},
            PROXY: {},
        }
    elif protocol == "proxy":
        expected = {
            USER: {PAILLIER_DEC: m, PRF_EVAL: m * (1 + t)},
            RECSYS: {PAILLIER_ADD: m, PRF_EVAL: m},
            PROXY: {PRF_HADD: m},
        }
    else:
        raise ConfigurationError(f"unknown protocol '{protocol}'")
    return {party: {op: n for op, n in ops.items() if n} for party, ops in expected.items()}


def table2_swhe_dec_cell(items: int) -> dict[str, int]:
    """What the published complexity table lists under SWHE.Dec for each party.

    The RecSys entry there cannot be a decryption (it holds no SWHE secret key);
    it is read as the M homomorphic mask removals, which already sit inside SWHE.Add.
    """
    return {USER: items, RECSYS: items}


def assert_counters(
    counters: SessionCounters, protocol: str, items: int, thresholds: int, slots: int | None = None
) -> None:
    """Exact comparison against :func:`expected_counts`; raises with the full diff."""
    expected = expected_counts(protocol, items, thresholds, slots)
    diff = []
    for party in PARTIES:
        observed = counters[party].as_dict()
        for op in sorted(set(expected[party]) | set(observed)):
            want, got = expected[party].get(op, 0), observed.get(op, 0)
            if want != got:
                diff.append((party, op, want, got))
    if diff:
        raise CounterMismatchError(diff)
    logger.info(f"Operation counters match the {protocol} formulas for M={items}, T={thresholds}")
