import csv
import logging
from collections import Counter
from pathlib import Path
from typing import Any

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from modules.expert_model import ExpertModelParams, predict_external_all  # noqa: E402
from modules.ratings import RatingMatrix, profile_mean  # noqa: E402

logger = logging.getLogger(__name__)


class PredictionHistogram:
    """Distribution of out-of-sample predictions, rounded to one decimal place."""

    def __init__(self, config: dict[str, Any]):
        self.config = config
        self.histogram_config = config.get("histogram", {})
        self.decimals = int(self.histogram_config.get("decimals", 1))

    def compute(self, model: ExpertModelParams, dataset: RatingMatrix) -> Counter:
        """Count predictions over every (user, unrated item) pair of ``dataset``."""
        if dataset.num_items != model.num_items:
            raise ValueError(f"dataset has {dataset.num_items} items, model has {model.num_items}")

        counts: Counter = Counter()
        for user in range(dataset.num_users):
            ratings = dataset.user_vector(user)
            mean = profile_mean(ratings, model.stats.global_mean)
            predictions = predict_external_all(model, ratings, mean)
            unrated = predictions[ratings == 0]
            # +0.0 folds negative zero into zero
            rounded = np.round(unrated, self.decimals) + 0.0
            counts.update(float(v) for v in rounded)

        logger.info(f"Histogram over {sum(counts.values())} predictions in {len(counts)} buckets")
        return counts

    def write_csv(self, counts: Counter, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["value", "count"])
            for value in sorted(counts):
                writer.writerow([f"{value:.{self.decimals}f}", counts[value]])
        return path

    def create_chart(self, counts: Counter, path: str | Path, thresholds: list[float] | None = None) -> str | None:
        """Bar chart of the distribution; threshold values are marked when given."""
        try:
            values = sorted(counts)
            plt.figure(figsize=(12, 6))
            plt.bar(values, [counts[v] for v in values], width=0.08, color="skyblue", alpha=0.8)
            for threshold in thresholds or []:
                plt.axvline(threshold, color="orange", linestyle="--", linewidth=1)
            plt.title("Distribution of Predicted Ratings")
            plt.xlabel("Predicted rating")
            plt.ylabel("Number of predictions")

            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            plt.savefig(path, dpi=300, bbox_inches="tight")
            plt.close()
            return str(path)

        except Exception as e:
            logger.error(f"Error creating histogram chart: {e}")
            return None
