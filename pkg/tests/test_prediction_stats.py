"""
Tests for the prediction histogram
"""

import os
import sys
from collections import Counter

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from modules.prediction_stats import PredictionHistogram
from modules.ratings import RatingMatrix


class TestPredictionHistogram:
    """Test cases for PredictionHistogram"""

    def test_counts_every_unrated_pair(self, temp_config, trained_model):
        dataset = trained_model.experts
        counts = PredictionHistogram(temp_config).compute(trained_model, dataset)
        unrated = dataset.num_users * dataset.num_items - len(dataset)
        assert sum(counts.values()) == unrated

    def test_values_rounded_to_one_decimal(self, temp_config, trained_model):
        counts = PredictionHistogram(temp_config).compute(trained_model, trained_model.experts)
        assert all(round(v, 1) == v for v in counts)

    def test_fully_rated_dataset_is_empty(self, temp_config, trained_model):
        items = trained_model.num_items
        dataset = RatingMatrix(num_users=1, num_items=items, entries={(0, j): 3 for j in range(items)})
        assert PredictionHistogram(temp_config).compute(trained_model, dataset) == Counter()

    def test_item_space_mismatch(self, temp_config, trained_model):
        with pytest.raises(ValueError, match="items"):
            PredictionHistogram(temp_config).compute(trained_model, RatingMatrix(num_users=1, num_items=2))

    def test_csv(self, temp_config, tmp_path):
        path = PredictionHistogram(temp_config).write_csv(Counter({4.9: 3, -0.2: 1, 5.0: 7}), tmp_path / "h.csv")
        assert path.read_text().splitlines() == ["value,count", "-0.2,1", "4.9,3", "5.0,7"]

    def test_chart(self, temp_config, tmp_path):
        histogram = PredictionHistogram(temp_config)
        path = histogram.create_chart(Counter({3.1: 2, 3.2: 5}), tmp_path / "h.png", thresholds=[3.2])
        assert path is not None and os.path.exists(path)

    def test_chart_failure_returns_none(self, temp_config, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        histogram = PredictionHistogram(temp_config)
        assert histogram.create_chart(Counter({3.0: 1}), blocker / "h.png") is None
