import logging
from typing import Any

import numpy as np

from modules.ratings import RatingMatrix, compute_stats
from utils.errors import ConfigurationError

logger = logging.getLogger(__name__)


class DeviationDetector:
    """Flags profiles far from the crowd.

    A profile is rejected when the mean absolute deviation of its ratings from the
    per-item means exceeds ``deviation_threshold``, or when its filler size (number
    of rated items) has a z-score above ``filler_threshold``. Timestamps play no part.
    """

    name = "deviation"

    def __init__(self, config: dict[str, Any]):
        self.robdet_config = config.get("robdet", {})
        self.deviation_threshold = float(self.robdet_config.get("deviation_threshold", 1.5))
        self.filler_threshold = float(self.robdet_config.get("filler_threshold", 3.0))

    def profile_statistics(self, matrix: RatingMatrix) -> tuple[np.ndarray, np.ndarray]:
        """Per-user (mean absolute deviation, filler-size z-score)."""
        deviation = np.zeros(matrix.num_users)
        counts = np.zeros(matrix.num_users)
        if not matrix.entries:
            return deviation, counts

        item_mean = compute_stats(matrix).item_mean
        for u, ratings in matrix.by_user().items():
            if not ratings:
                continue
            items = np.fromiter(ratings.keys(), dtype=np.int64)
            values = np.fromiter(ratings.values(), dtype=np.float64)
            deviation[u] = float(np.mean(np.abs(values - item_mean[items])))
            counts[u] = len(ratings)

        spread = counts.std()
        filler_z = (counts - counts.mean()) / spread if spread > 0 else np.zeros_like(counts)
        return deviation, filler_z

    def verdict(self, matrix: RatingMatrix) -> list[int]:
        deviation, filler_z = self.profile_statistics(matrix)
        bits = [
            0 if (deviation[u] > self.deviation_threshold or filler_z[u] > self.filler_threshold) else 1
            for u in range(matrix.num_users)
        ]
        logger.debug(f"Deviation detector rejected {bits.count(0)} of {len(bits)} profiles")
        return bits


class AcceptAllDetector:
    name = "accept_all"

    def __init__(self, config: dict[str, Any]):
        self.config = config

    def verdict(self, matrix: RatingMatrix) -> list[int]:
        return [1] * matrix.num_users


DETECTORS = {
    DeviationDetector.name: DeviationDetector,
    AcceptAllDetector.name: AcceptAllDetector,
}


def register_detector(name: str, detector_cls: type) -> None:
    DETECTORS[name] = detector_cls


def robdet_filter(matrix: RatingMatrix, config: dict[str, Any]) -> list[int]:
    """One accept (1) / reject (0) bit per profile, from the configured detector."""
    name = config.get("robdet", {}).get("detector", DeviationDetector.name)
    detector_cls = DETECTORS.get(name)
    if detector_cls is None:
        raise ConfigurationError(f"unknown RobDet detector '{name}' (known: {', '.join(sorted(DETECTORS))})")

    verdict = detector_cls(config).verdict(matrix)
    logger.info(f"RobDet '{name}' accepted {sum(verdict)} of {len(verdict)} profiles")
    return verdict


def accepted_users(verdict: list[int]) -> list[int]:
    return [u for u, bit in enumerate(verdict) if bit == 1]
