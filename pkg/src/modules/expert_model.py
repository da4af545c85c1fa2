"""
Expert-based latent factor model.

An expert t's preference for item j is

    mu + b_t + b_j + b*_t + b*_j + (R_t A) q_j

where R_t is the expert's raw rating row, mu/b_t/b_j are frozen statistics of the
accepted expert set, and A, Q, b*_t, b*_j are learned by SGD. An outside user i
with rating row R_i and mean m_i gets m_i + b_j + avg(b*_t) + b*_j + (R_i A) q_j,
which is linear in R_i and m_i and therefore computable on Paillier ciphertexts.
"""

import logging
import struct
from dataclasses import dataclass, field
from typing import Any, Callable

import gmpy2
import numpy as np

from modules.counters import PAILLIER_ADD, PAILLIER_SCALAR_MUL, OpCounters
from modules.paillier import PaillierCiphertext, PaillierPublicKey
from modules.ratings import (
    RatingMatrix,
    RatingStats,
    compute_stats,
    deserialize_matrix,
    serialize_matrix,
)
from modules.robdet import accepted_users
from utils.errors import ConfigurationError, EmptyDatasetError, TrainingError
from utils.randomness import make_rng

logger = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"RSEM"
SNAPSHOT_VERSION = 1


@dataclass
class TrainConfig:
    k: int = 16
    learning_rate: float = 0.005
    reg_features: float = 0.02
    reg_biases: float = 0.02
    epochs: int = 30
    init_scale: float = 0.05
    seed: int | None = 0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError("training.k must be positive")
        if self.learning_rate <= 0 or self.reg_features < 0 or self.reg_biases < 0:
            raise ConfigurationError("learning rate must be positive and regularization weights non-negative")
        if self.epochs < 0:
            raise ConfigurationError("training.epochs cannot be negative")

    @classmethod
    def from_config(cls, config: dict[str, Any]) -> "TrainConfig":
        training = config.get("training", {})
        return cls(
            k=int(training.get("k", 16)),
            learning_rate=float(training.get("learning_rate", 0.005)),
            reg_features=float(training.get("reg_features", 0.02)),
            reg_biases=float(training.get("reg_biases", 0.02)),
            epochs=int(training.get("epochs", 30)),
            init_scale=float(training.get("init_scale", 0.05)),
            seed=training.get("seed", 0),
        )


@dataclass
class ExpertModelParams:
    A: np.ndarray
    Q: np.ndarray
    user_star_bias: np.ndarray
    item_star_bias: np.ndarray
    stats: RatingStats
    experts: RatingMatrix
    loss_history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.A.shape[1]

    @property
    def num_items(self) -> int:
        return self.A.shape[0]

    @property
    def avg_user_star_bias(self) -> float:
        return float(self.user_star_bias.mean()) if len(self.user_star_bias) else 0.0

    def validate(self) -> None:
        for name in ("A", "Q", "user_star_bias", "item_star_bias"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise TrainingError(f"model parameter {name} contains non-finite values")
        if self.A.shape != self.Q.shape or self.A.shape[0] != self.experts.num_items:
            raise ConfigurationError("model dimensions do not match the expert rating matrix")


@dataclass
class ScaledModel:
    """Integer constants for the encrypted prediction.

    ``item_offset[j]`` is round(scale * (b_j + avg(b*_t) + b*_j)), ``A`` and ``Q`` are
    scaled by ``a_scale`` and ``q_scale`` with a_scale * q_scale == scale.
    """

    scale: int
    a_scale: int
    q_scale: int
    item_offset: list[int]
    A: list[list[int]]
    Q: list[list[int]]


# -- training -------------------------------------------------------------------


def _entry_arrays(matrix: RatingMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    keys = sorted(matrix.entries)
    users = np.array([u for u, _ in keys], dtype=np.int64)
    items = np.array([j for _, j in keys], dtype=np.int64)
    values = np.array([matrix.entries[key] for key in keys], dtype=np.float64)
    return users, items, values


def _profile_factors(params: ExpertModelParams, users, items, values) -> np.ndarray:
    """Z[t] = R_t A for every expert, from the sparse entries."""
    z = np.zeros((params.experts.num_users, params.k))
    np.add.at(z, users, values[:, None] * params.A[items])
    return z


def _residuals(params: ExpertModelParams, users, items, values, z) -> np.ndarray:
    s = params.stats
    prediction = (
        s.global_mean
        + s.user_bias[users]
        + s.item_bias[items]
        + params.user_star_bias[users]
        + params.item_star_bias[items]
        + np.sum(z[users] * params.Q[items], axis=1)
    )
    return values - prediction


def training_loss(params: ExpertModelParams, cfg: TrainConfig) -> float:
    """Sum of squared residuals over expert ratings plus the L2 penalties."""
    users, items, values = _entry_arrays(params.experts)
    z = _profile_factors(params, users, items, values)
    e = _residuals(params, users, items, values, z)
    penalty = cfg.reg_features * (np.sum(params.A**2) + np.sum(params.Q**2))
    penalty += cfg.reg_biases * (np.sum(params.user_star_bias**2) + np.sum(params.item_star_bias**2))
    return float(np.sum(e**2) + penalty)


def loss_gradient(params: ExpertModelParams, cfg: TrainConfig) -> dict[str, np.ndarray]:
    """Exact gradient of :func:`training_loss` with respect to A, Q and the starred biases."""
    users, items, values = _entry_arrays(params.experts)
    z = _profile_factors(params, users, items, values)
    e = _residuals(params, users, items, values, z)

    grad_q = 2 * cfg.reg_features * params.Q
    np.add.at(grad_q, items, -2 * e[:, None] * z[users])

    weighted = np.zeros_like(z)
    np.add.at(weighted, users, e[:, None] * params.Q[items])
    grad_a = 2 * cfg.reg_features * params.A
    np.add.at(grad_a, items, -2 * values[:, None] * weighted[users])

    grad_bu = 2 * cfg.reg_biases * params.user_star_bias
    np.add.at(grad_bu, users, -2 * e)
    grad_bi = 2 * cfg.reg_biases * params.item_star_bias
    np.add.at(grad_bi, items, -2 * e)

    return {"A": grad_a, "Q": grad_q, "user_star_bias": grad_bu, "item_star_bias": grad_bi}


def initial_params(experts: RatingMatrix, cfg: TrainConfig) -> ExpertModelParams:
    rng = make_rng(cfg.seed, "training", "init")
    shape = (experts.num_items, cfg.k)
    return ExpertModelParams(
        A=rng.uniform(-cfg.init_scale, cfg.init_scale, size=shape),
        Q=rng.uniform(-cfg.init_scale, cfg.init_scale, size=shape),
        user_star_bias=np.zeros(experts.num_users),
        item_star_bias=np.zeros(experts.num_items),
        stats=compute_stats(experts),
        experts=experts,
    )


def _sgd_epoch(params: ExpertModelParams, cfg: TrainConfig, rng: np.random.Generator) -> None:
    # Z_t is fixed while one expert's ratings are visited; A is updated once per expert
    s = params.stats
    lr, lam, mu_reg = cfg.learning_rate, cfg.reg_features, cfg.reg_biases
    profiles = params.experts.by_user()

    for t in rng.permutation(params.experts.num_users):
        ratings = profiles[int(t)]
        if not ratings:
            continue
        rated = np.fromiter(ratings.keys(), dtype=np.int64)
        r_values = np.fromiter(ratings.values(), dtype=np.float64)
        z = r_values @ params.A[rated]
        grad_z = np.zeros(params.k)

        for pos in rng.permutation(len(rated)):
            j = int(rated[pos])
            q_j = params.Q[j]
            prediction = (
                s.global_mean
                + s.user_bias[t]
                + s.item_bias[j]
                + params.user_star_bias[t]
                + params.item_star_bias[j]
                + z @ q_j
            )
            e = r_values[pos] - prediction
            grad_z += e * q_j
            params.Q[j] = q_j + lr * (e * z - lam * q_j)
            params.user_star_bias[t] += lr * (e - mu_reg * params.user_star_bias[t])
            params.item_star_bias[j] += lr * (e - mu_reg * params.item_star_bias[j])

        params.A[rated] += lr * (np.outer(r_values, grad_z) - lam * params.A[rated])


def train(
    expert: RatingMatrix,
    verdict: list[int],
    cfg: TrainConfig,
    on_epoch: Callable[[int, float], None] | None = None,
) -> ExpertModelParams:
    """Fit the model on the profiles RobDet accepted.

    Rejected profiles are dropped before anything else touches the data, so their
    ratings have no influence on the result.
    """
    if len(verdict) != expert.num_users:
        raise ConfigurationError(f"verdict has {len(verdict)} bits for {expert.num_users} profiles")
    accepted = accepted_users(verdict)
    if not accepted:
        raise EmptyDatasetError("RobDet accepted no expert profiles; nothing to train on")

    experts = expert.subset_users(accepted)
    if not experts.entries:
        raise EmptyDatasetError("accepted expert profiles contain no ratings")

    params = initial_params(experts, cfg)
    rng = make_rng(cfg.seed, "training", "shuffle")
    logger.info(
        f"Training on {experts.num_users} experts, {len(experts)} ratings, k={cfg.k}, {cfg.epochs} epochs"
    )

    for epoch in range(cfg.epochs):
        _sgd_epoch(params, cfg, rng)
        params.validate()
        loss = training_loss(params, cfg)
        params.loss_history.append(loss)
        logger.debug(f"Epoch {epoch + 1}: loss {loss:.4f}")
        if on_epoch:
            on_epoch(epoch, loss)

    return params


def training_rmse(params: ExpertModelParams) -> float:
    users, items, values = _entry_arrays(params.experts)
    z = _profile_factors(params, users, items, values)
    e = _residuals(params, users, items, values, z)
    return float(np.sqrt(np.mean(e**2)))


# -- plaintext predictions ------------------------------------------------------


def predict_expert(params: ExpertModelParams, t: int, j: int) -> float:
    if not 0 <= t < params.experts.num_users:
        raise IndexError(f"unknown expert index {t}")
    if not 0 <= j < params.num_items:
        raise IndexError(f"unknown item index {j}")
    s = params.stats
    z = params.experts.user_vector(t) @ params.A
    return float(
        s.global_mean
        + s.user_bias[t]
        + s.item_bias[j]
        + params.user_star_bias[t]
        + params.item_star_bias[j]
        + z @ params.Q[j]
    )


def predict_external_all(params: ExpertModelParams, ratings: np.ndarray, mean: float) -> np.ndarray:
    """Predictions for every item for an outside user with rating row ``ratings``."""
    ratings = np.asarray(ratings, dtype=np.float64)
    if ratings.shape != (params.num_items,):
        raise ValueError(f"rating vector has shape {ratings.shape}, model expects ({params.num_items},)")
    z = ratings @ params.A
    return mean + params.stats.item_bias + params.avg_user_star_bias + params.item_star_bias + params.Q @ z


def predict_external(params: ExpertModelParams, ratings: np.ndarray, mean: float, j: int) -> float:
    if not 0 <= j < params.num_items:
        raise IndexError(f"unknown item index {j}")
    return float(predict_external_all(params, ratings, mean)[j])


# -- encrypted predictions ------------------------------------------------------


@dataclass
class EncryptedProfile:
    """Paillier encryptions of a user's raw rating row and of round(scale * mean)."""

    ratings: list[PaillierCiphertext]
    mean: PaillierCiphertext
    scale: int


class _SignedPowers:
    """x^w mod n^2 for signed w, inverting each base at most once."""

    def __init__(self, bases: list[int], nsquare: int):
        self.bases = bases
        self.nsquare = nsquare
        self._inverses: dict[int, int] = {}

    def power(self, index: int, exponent: int) -> int:
        if exponent >= 0:
            return int(gmpy2.powmod(self.bases[index], exponent, self.nsquare))
        inverse = self._inverses.get(index)
        if inverse is None:
            inverse = int(gmpy2.invert(self.bases[index], self.nsquare))
            self._inverses[index] = inverse
        return int(gmpy2.powmod(inverse, -exponent, self.nsquare))

    def weighted_sum(self, weights: list[int]) -> int:
        acc = 1
        for index, weight in enumerate(weights):
            if weight:
                acc = acc * self.power(index, weight) % self.nsquare
        return acc


def encrypted_predict(
    model: ScaledModel,
    profile: EncryptedProfile,
    items: list[int],
    pk: PaillierPublicKey,
    ops: OpCounters | None = None,
) -> list[PaillierCiphertext]:
    """Encrypted round(scale * prediction) for each item, using only additive operations.

    The interaction term is factorized: Enc(z_f) = sum_l R_il * A_lf once per factor,
    then each item adds sum_f z_f * Q_jf. ``ops`` records the work.
    """
    if profile.scale != model.scale:
        raise ConfigurationError(f"profile scale {profile.scale} does not match model scale {model.scale}")
    if len(profile.ratings) != len(model.A):
        raise ConfigurationError(f"profile has {len(profile.ratings)} items, model has {len(model.A)}")
    for ct in [profile.mean, *profile.ratings]:
        if ct.fingerprint != pk.fingerprint:
            raise ConfigurationError("encrypted profile is not under the supplied Paillier key")

    nsquare = pk.nsquare
    k = len(model.A[0]) if model.A else 0
    ratings = _SignedPowers([ct.value for ct in profile.ratings], nsquare)
    factors = _SignedPowers([ratings.weighted_sum([row[f] for row in model.A]) for f in range(k)], nsquare)

    results = []
    for j in items:
        # g^offset = 1 + offset * n for g = n + 1
        acc = profile.mean.value * (1 + (model.item_offset[j] % pk.n) * pk.n) % nsquare
        acc = acc * factors.weighted_sum(model.Q[j]) % nsquare
        results.append(PaillierCiphertext(acc, pk.fingerprint))

    if ops is not None:
        ops.bump(PAILLIER_SCALAR_MUL, k * (len(profile.ratings) + len(items)))
        ops.bump(PAILLIER_ADD, k * len(profile.ratings) + len(items) * (k + 1))
    return results


# -- snapshot -------------------------------------------------------------------


def _pack_array(array: np.ndarray) -> bytes:
    return struct.pack("<I", array.size) + np.ascontiguousarray(array, dtype="<f8").tobytes()


def _unpack_array(data: bytes, offset: int, shape: tuple[int, ...]) -> tuple[np.ndarray, int]:
    (size,) = struct.unpack_from("<I", data, offset)
    offset += 4
    expected = int(np.prod(shape)) if shape else 0
    if size != expected:
        raise ConfigurationError(f"model snapshot array has {size} values, expected {expected}")
    array = np.frombuffer(data, dtype="<f8", count=size, offset=offset).reshape(shape).astype(np.float64)
    return array, offset + 8 * size


def save_snapshot(params: ExpertModelParams) -> bytes:
    """Versioned binary snapshot: header, row-major f64 arrays, then the expert matrix."""
    header = SNAPSHOT_MAGIC + struct.pack("<BIII", SNAPSHOT_VERSION, params.num_items, params.k, len(params.user_star_bias))
    parts = [
        header,
        _pack_array(params.A),
        _pack_array(params.Q),
        _pack_array(params.user_star_bias),
        _pack_array(params.item_star_bias),
        struct.pack("<I", len(params.loss_history)),
        np.asarray(params.loss_history, dtype="<f8").tobytes(),
        serialize_matrix(params.experts),
    ]
    return b"".join(parts)


def load_snapshot(data: bytes) -> ExpertModelParams:
    if data[:4] != SNAPSHOT_MAGIC:
        raise ConfigurationError("not a model snapshot")
    try:
        version, num_items, k, num_experts = struct.unpack_from("<BIII", data, 4)
        if version != SNAPSHOT_VERSION:
            raise ConfigurationError(f"unsupported model snapshot version {version}")
        offset = 4 + struct.calcsize("<BIII")
        A, offset = _unpack_array(data, offset, (num_items, k))
        Q, offset = _unpack_array(data, offset, (num_items, k))
        user_star_bias, offset = _unpack_array(data, offset, (num_experts,))
        item_star_bias, offset = _unpack_array(data, offset, (num_items,))
        (history_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        history = np.frombuffer(data, dtype="<f8", count=history_len, offset=offset).tolist()
        offset += 8 * history_len
        experts, _ = deserialize_matrix(data, offset)
    except (struct.error, ValueError) as e:
        raise ConfigurationError(f"corrupt model snapshot: {e}") from e

    params = ExpertModelParams(
        A=A,
        Q=Q,
        user_star_bias=user_star_bias,
        item_star_bias=item_star_bias,
        stats=compute_stats(experts),
        experts=experts,
        loss_history=history,
    )
    params.validate()
    return params


def save_snapshot_file(params: ExpertModelParams, path: str) -> None:
    with open(path, "wb") as f:
        f.write(save_snapshot(params))
    logger.info(f"Model snapshot written to {path}")


def load_snapshot_file(path: str) -> ExpertModelParams:
    with open(path, "rb") as f:
        return load_snapshot(f.read())
