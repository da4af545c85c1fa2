"""
Tests for expert-model training, predictions and snapshots
"""

import os
import sys
from dataclasses import replace

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from modules import paillier
from modules.expert_model import (
    TrainConfig,
    encrypted_predict,
    initial_params,
    load_snapshot,
    load_snapshot_file,
    loss_gradient,
    predict_expert,
    predict_external,
    predict_external_all,
    save_snapshot,
    save_snapshot_file,
    train,
    training_loss,
    training_rmse,
)
from modules.protocol_common import encrypt_profile, scale_model
from modules.ratings import RatingMatrix, profile_mean
from utils.errors import ConfigurationError, EmptyDatasetError
from utils.randomness import make_rng


def _rank_one_matrix() -> RatingMatrix:
    u = [1, 2, 1, 2, 1]
    v = [1, 2, 2, 1]
    entries = {(t, j): u[t] * v[j] for t in range(5) for j in range(4)}
    return RatingMatrix(num_users=5, num_items=4, entries=entries)


class TestTrainConfig:
    """Test cases for TrainConfig"""

    def test_from_config(self, temp_config):
        cfg = TrainConfig.from_config(temp_config)
        assert cfg.k == 3
        assert cfg.epochs == 5

    def test_invalid_values(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(k=0)
        with pytest.raises(ConfigurationError):
            TrainConfig(learning_rate=0)
        with pytest.raises(ConfigurationError):
            TrainConfig(epochs=-1)


class TestGradient:
    """Test cases for the loss gradient"""

    def test_matches_finite_differences(self):
        """Test the analytic gradient against central differences on a 3x3 toy"""
        toy = RatingMatrix(
            num_users=3,
            num_items=3,
            entries={(0, 0): 5, (0, 1): 3, (1, 1): 4, (1, 2): 1, (2, 0): 2, (2, 2): 5},
        )
        cfg = TrainConfig(k=2, reg_features=0.05, reg_biases=0.03, seed=2)
        params = initial_params(toy, cfg)
        rng = np.random.default_rng(8)
        params.A = rng.normal(scale=0.3, size=params.A.shape)
        params.Q = rng.normal(scale=0.3, size=params.Q.shape)
        params.user_star_bias = rng.normal(scale=0.2, size=3)
        params.item_star_bias = rng.normal(scale=0.2, size=3)

        gradient = loss_gradient(params, cfg)
        eps = 1e-6
        for name in ("A", "Q", "user_star_bias", "item_star_bias"):
            array = getattr(params, name)
            for index in np.ndindex(array.shape):
                saved = array[index]
                array[index] = saved + eps
                upper = training_loss(params, cfg)
                array[index] = saved - eps
                lower = training_loss(params, cfg)
                array[index] = saved
                numeric = (upper - lower) / (2 * eps)
                analytic = gradient[name][index]
                assert abs(numeric - analytic) <= 1e-4 * max(1.0, abs(analytic)), f"{name}{index}"


class TestTraining:
    """Test cases for SGD training"""

    def test_rank_one_fit(self):
        """Test that a rank-1 synthetic matrix is fit almost exactly"""
        matrix = _rank_one_matrix()
        cfg = TrainConfig(k=2, learning_rate=0.02, reg_features=0.001, reg_biases=0.001, epochs=500, seed=1)
        params = train(matrix, [1] * 5, cfg)
        assert training_rmse(params) < 0.1

    def test_loss_decreases(self, expert_matrix):
        cfg = TrainConfig(k=3, learning_rate=0.01, epochs=10, seed=1)
        params = train(expert_matrix, [1] * expert_matrix.num_users, cfg)
        assert len(params.loss_history) == 10
        assert params.loss_history[-1] < params.loss_history[0]

    def test_zero_epochs_returns_initialization(self, expert_matrix):
        cfg = TrainConfig(k=3, epochs=0, seed=4)
        params = train(expert_matrix, [1] * expert_matrix.num_users, cfg)
        assert params.loss_history == []
        assert np.array_equal(params.A, initial_params(expert_matrix, cfg).A)

    def test_deterministic_under_seed(self, expert_matrix):
        cfg = TrainConfig(k=3, epochs=3, seed=5)
        verdict = [1] * expert_matrix.num_users
        assert np.array_equal(train(expert_matrix, verdict, cfg).Q, train(expert_matrix, verdict, cfg).Q)

    def test_on_epoch_callback(self, expert_matrix):
        seen = []
        train(expert_matrix, [1] * expert_matrix.num_users, TrainConfig(k=2, epochs=3), lambda e, loss: seen.append(e))
        assert seen == [0, 1, 2]

    def test_rejected_profiles_have_no_influence(self, expert_matrix):
        """Test that changing a rejected profile leaves the trained model unchanged"""
        verdict = [0] + [1] * (expert_matrix.num_users - 1)
        tampered = dict(expert_matrix.entries)
        for j in range(expert_matrix.num_items):
            tampered[(0, j)] = 5
        other = RatingMatrix(num_users=expert_matrix.num_users, num_items=expert_matrix.num_items, entries=tampered)

        cfg = TrainConfig(k=3, epochs=4, seed=1)
        first = train(expert_matrix, verdict, cfg)
        second = train(other, verdict, cfg)
        assert first.experts.num_users == expert_matrix.num_users - 1
        assert np.array_equal(first.A, second.A)
        assert np.array_equal(first.item_star_bias, second.item_star_bias)

    def test_verdict_length_checked(self, expert_matrix):
        with pytest.raises(ConfigurationError, match="verdict"):
            train(expert_matrix, [1], TrainConfig(k=2, epochs=1))

    def test_everything_rejected(self, expert_matrix):
        with pytest.raises(EmptyDatasetError):
            train(expert_matrix, [0] * expert_matrix.num_users, TrainConfig(k=2, epochs=1))


class TestPredictions:
    """Test cases for plaintext predictions"""

    def test_external_prediction_shape(self, trained_model):
        ratings = np.zeros(trained_model.num_items)
        ratings[0] = 4
        predictions = predict_external_all(trained_model, ratings, 4.0)
        assert predictions.shape == (trained_model.num_items,)
        assert predict_external(trained_model, ratings, 4.0, 5) == pytest.approx(predictions[5])

    def test_empty_profile_predicts_biases_only(self, trained_model):
        predictions = predict_external_all(trained_model, np.zeros(trained_model.num_items), 3.0)
        expected = 3.0 + trained_model.stats.item_bias + trained_model.avg_user_star_bias + trained_model.item_star_bias
        assert np.allclose(predictions, expected)

    def test_wrong_profile_length(self, trained_model):
        with pytest.raises(ValueError, match="shape"):
            predict_external_all(trained_model, np.zeros(3), 3.0)

    def test_index_errors(self, trained_model):
        with pytest.raises(IndexError):
            predict_expert(trained_model, trained_model.experts.num_users, 0)
        with pytest.raises(IndexError):
            predict_expert(trained_model, 0, trained_model.num_items)
        with pytest.raises(IndexError):
            predict_external(trained_model, np.zeros(trained_model.num_items), 3.0, -1)

    def test_encrypted_prediction_matches_plaintext(self, trained_model, paillier_keys, session_spec_fixture):
        """Test that the additive-only evaluation tracks the float prediction to within a few units"""
        spec = session_spec_fixture
        pk = paillier_keys.public_key
        ratings = trained_model.experts.user_vector(3)
        mean = profile_mean(ratings, trained_model.stats.global_mean)

        profile = encrypt_profile(ratings, mean, spec, pk, make_rng(1, "profile"))
        items = list(range(trained_model.num_items))
        cts = encrypted_predict(scale_model(trained_model, spec), profile, items, pk)
        expected = predict_external_all(trained_model, ratings, mean)

        for j, ct in zip(items, cts):
            value = paillier.dec(ct, paillier_keys)
            assert abs(value - expected[j] * spec.scale) <= 4 * (1 << spec.precision_bits)

    @pytest.mark.slow
    def test_encrypted_prediction_random_models(self, trained_model, paillier_keys, session_spec_fixture):
        """Test 500 random (model, rating row, item) draws against the float prediction"""
        spec = session_spec_fixture
        pk = paillier_keys.public_key
        rng = make_rng(29, "prediction-fidelity")
        shape = trained_model.A.shape
        for trial in range(500):
            params = replace(
                trained_model,
                A=rng.uniform(-0.5, 0.5, size=shape),
                Q=rng.uniform(-0.5, 0.5, size=shape),
                user_star_bias=rng.normal(scale=0.2, size=trained_model.user_star_bias.shape),
                item_star_bias=rng.normal(scale=0.2, size=trained_model.num_items),
            )
            ratings = rng.integers(0, 6, size=trained_model.num_items).astype(np.float64)
            mean = profile_mean(ratings, trained_model.stats.global_mean)
            j = int(rng.integers(trained_model.num_items))

            profile = encrypt_profile(ratings, mean, spec, pk, rng)
            (ct,) = encrypted_predict(scale_model(params, spec), profile, [j], pk)
            value = paillier.dec(ct, paillier_keys)
            if value > pk.n // 2:
                value -= pk.n
            expected = predict_external(params, ratings, mean, j) * spec.scale
            assert abs(value - expected) <= 4 * (1 << spec.precision_bits), f"draw {trial}: item {j}"

    def test_encrypted_prediction_scale_mismatch(self, trained_model, paillier_keys, session_spec_fixture):
        pk = paillier_keys.public_key
        ratings = trained_model.experts.user_vector(0)
        profile = encrypt_profile(ratings, 3.0, session_spec_fixture, pk)
        profile.scale += 1
        with pytest.raises(ConfigurationError, match="scale"):
            encrypted_predict(scale_model(trained_model, session_spec_fixture), profile, [0], pk)


class TestSnapshot:
    """Test cases for model snapshots"""

    def test_round_trip(self, trained_model):
        restored = load_snapshot(save_snapshot(trained_model))
        assert np.array_equal(restored.A, trained_model.A)
        assert np.array_equal(restored.Q, trained_model.Q)
        assert np.array_equal(restored.user_star_bias, trained_model.user_star_bias)
        assert restored.loss_history == trained_model.loss_history
        assert restored.experts.entries == trained_model.experts.entries

    def test_file_round_trip(self, trained_model, tmp_path):
        path = tmp_path / "model.bin"
        save_snapshot_file(trained_model, str(path))
        restored = load_snapshot_file(str(path))
        assert np.array_equal(restored.item_star_bias, trained_model.item_star_bias)

    def test_bad_magic(self):
        with pytest.raises(ConfigurationError, match="not a model snapshot"):
            load_snapshot(b"JUNKJUNK")

    def test_truncated(self, trained_model):
        data = save_snapshot(trained_model)
        with pytest.raises(ConfigurationError):
            load_snapshot(data[: len(data) // 2])
