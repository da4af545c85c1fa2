"""
Wall-clock cost of the cryptographic primitives, in the layout of the published
cost table (Paillier Enc/Dec/Add, SWHE Enc/Dec/Mul/partial Mul/Add) plus the
key-homomorphic PRF. Published milliseconds are printed alongside; nothing is
asserted about them since they come from other hardware.
"""

import logging
import statistics
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from modules import paillier  # noqa: E402
from modules.harness import swhe_context_from_config  # noqa: E402
from modules.khprf import KhPrf, random_key  # noqa: E402
from modules.swhe import SwheContext  # noqa: E402
from utils.errors import ConfigurationError  # noqa: E402
from utils.randomness import make_rng, random_below  # noqa: E402

logger = logging.getLogger(__name__)

MIN_SAMPLES = 30

# (scheme, primitive) -> milliseconds reported on an i7-5600U
PUBLISHED_MS = {
    ("Paillier", "Enc"): 31.30,
    ("Paillier", "Dec"): 12.88,
    ("Paillier", "Add"): 0.0085,
    ("SWHE", "Enc"): 52.43,
    ("SWHE", "Dec"): 39.63,
    ("SWHE", "Mul"): 207.76,
    ("SWHE", "MulPartial"): 70.28,
    ("SWHE", "Add"): 0.742,
    ("Prf", "Evaluate"): 1.04,
    ("Prf", "Hadd"): 0.010,
}

TABLE_PRIMITIVES = [key for key in PUBLISHED_MS if key[0] != "Prf"]

PAILLIER_BITS = {"desk": 1024, "paper": 2048}


@dataclass
class BenchRow:
    scheme: str
    primitive: str
    mean_ms: float
    std_ms: float
    samples: int
    published_ms: float | None = None

    @property
    def label(self) -> str:
        return f"{self.scheme}.{self.primitive}"


@dataclass
class BenchReport:
    profile: str
    samples: int
    paillier_bits: int
    poly_degree: int
    rows: list[BenchRow] = field(default_factory=list)

    def row(self, scheme: str, primitive: str) -> BenchRow:
        for row in self.rows:
            if (row.scheme, row.primitive) == (scheme, primitive):
                return row
        raise KeyError(f"{scheme}.{primitive}")

    def table_rows(self) -> list[BenchRow]:
        return [self.row(*key) for key in TABLE_PRIMITIVES]


def time_operation(operation: Callable[[], Any], samples: int) -> tuple[float, float]:
    """Mean and standard deviation in milliseconds over ``samples`` runs."""
    timings = []
    for _ in range(samples):
        start = time.perf_counter()
        operation()
        timings.append((time.perf_counter() - start) * 1000.0)
    return statistics.fmean(timings), statistics.stdev(timings)


class Benchmark:
    def __init__(self, config: dict[str, Any]):
        self.config = config
        self.bench_config = config.get("bench", {})
        self.samples = int(self.bench_config.get("samples", MIN_SAMPLES))
        if self.samples < MIN_SAMPLES:
            raise ConfigurationError(f"bench.samples must be at least {MIN_SAMPLES}, got {self.samples}")
        self.seed = config.get("general", {}).get("seed")

    def run(self, profile: str | None = None, on_row: Callable[[BenchRow], None] | None = None) -> BenchReport:
        profile = profile or self.bench_config.get("profile", "desk")
        if profile not in PAILLIER_BITS:
            raise ConfigurationError(f"unknown benchmark profile '{profile}'")

        rng = make_rng(self.seed, "bench")
        context = swhe_context_from_config(self.config, profile)
        paillier_bits = PAILLIER_BITS[profile]
        report = BenchReport(profile, self.samples, paillier_bits, context.params.poly_degree)
        logger.info(f"Benchmarking profile {profile}: n={context.params.poly_degree}, Paillier {paillier_bits} bits")

        for scheme, primitive, operation in self._operations(context, paillier_bits, rng):
            mean_ms, std_ms = time_operation(operation, self.samples)
            row = BenchRow(scheme, primitive, mean_ms, std_ms, self.samples, PUBLISHED_MS.get((scheme, primitive)))
            report.rows.append(row)
            logger.debug(f"{row.label}: {mean_ms:.4f} ms (sd {std_ms:.4f})")
            if on_row:
                on_row(row)
        return report

    def _operations(self, context: SwheContext, paillier_bits: int, rng: np.random.Generator):
        keys = paillier.keygen(paillier_bits, rng)
        pk = keys.public_key
        m1, m2 = random_below(rng, pk.n), random_below(rng, pk.n)
        c1, c2 = paillier.enc(m1, pk, rng), paillier.enc(m2, pk, rng)
        yield "Paillier", "Enc", lambda: paillier.enc(m1, pk, rng)
        yield "Paillier", "Dec", lambda: paillier.dec(c1, keys)
        yield "Paillier", "Add", lambda: paillier.add(c1, c2, pk)

        swhe_keys = context.keygen(rng)
        t = context.params.plain_modulus
        v1 = context.encode([random_below(rng, t) for _ in range(context.slot_count)])
        v2 = context.encode([random_below(rng, t) for _ in range(context.slot_count)])
        s1 = context.encrypt(v1, swhe_keys, rng)
        s2 = context.encrypt(v2, swhe_keys, rng)
        yield "SWHE", "Enc", lambda: context.encrypt(v1, swhe_keys, rng)
        yield "SWHE", "Dec", lambda: context.decrypt(s1, swhe_keys)
        yield "SWHE", "Mul", lambda: context.mul(s1, s2, swhe_keys.evaluation_key)
        yield "SWHE", "MulPartial", lambda: context.mul_plain(s1, v2)
        yield "SWHE", "Add", lambda: context.add(s1, s2)

        prf = KhPrf(self.config)
        nonce = rng.bytes(32)
        key = random_key(rng, 120)
        # H(m) is memoized per nonce, so warm it to time the exponentiation alone
        out1 = prf.evaluate(key, nonce)
        out2 = prf.evaluate(random_key(rng, 120), nonce)
        yield "Prf", "Evaluate", lambda: prf.evaluate(key, nonce)
        yield "Prf", "Hadd", lambda: prf.combine(out1, out2)


def create_bench_chart(report: BenchReport, path: str | Path) -> str | None:
    """Measured against published times, log scale, one bar pair per primitive."""
    try:
        labels = [row.label for row in report.rows]
        measured = [row.mean_ms for row in report.rows]
        published = [row.published_ms or 0.0 for row in report.rows]
        x = np.arange(len(labels))

        fig, ax = plt.subplots(figsize=(12, 6))
        ax.bar(x - 0.2, measured, 0.4, yerr=[row.std_ms for row in report.rows], label="measured", color="skyblue")
        ax.bar(x + 0.2, published, 0.4, label="published", color="lightcoral", alpha=0.7)
        ax.set_yscale("log")
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=45, ha="right")
        ax.set_ylabel("Milliseconds")
        ax.set_title(f"Primitive costs ({report.profile} profile, {report.samples} samples)")
        ax.legend()
        plt.tight_layout()

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        plt.savefig(path, dpi=300, bbox_inches="tight")
        plt.close()
        return str(path)

    except Exception as e:
        logger.error(f"Error creating benchmark chart: {e}")
        return None
