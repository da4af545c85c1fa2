"""
Pytest configuration and fixtures for RecShield tests
"""

import copy
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from modules import paillier  # noqa: E402
from modules.expert_model import TrainConfig, train  # noqa: E402
from modules.khprf import KhPrf  # noqa: E402
from modules.protocol_common import FixedPointSpec  # noqa: E402
from modules.ratings import RatingMatrix, parse_movielens  # noqa: E402
from modules.swhe import SwheContext, SwheParams  # noqa: E402
from utils.config_manager import ConfigManager  # noqa: E402
from utils.randomness import make_rng  # noqa: E402

# degree 64 still splits over both plaintext primes and keeps a full session under a second
TINY_SWHE_PROFILE = {"name": "tiny", "poly_degree": 64, "coeff_modulus_bits": 400, "max_depth": 2, "sigma": 3.2}

SAMPLE_LINES = [
    "1::10::5::978300760",
    "1::20::3::978302109",
    "1::30::4::978301968",
    "2::10::4::978300275",
    "2::40::2::978824291",
    "3::20::1::978302268",
    "3::30::5::978302039",
    "3::40::4::978300719",
]


@pytest.fixture
def temp_config():
    """Effective configuration with test-sized keys and parameters"""
    config = copy.deepcopy(ConfigManager().config)
    config["general"]["verbose"] = False
    config["general"]["log_file"] = os.devnull
    config["paillier"]["key_bits"] = 1024
    config["swhe"]["profiles"]["tiny"] = dict(TINY_SWHE_PROFILE)
    config["swhe"]["profile"] = "tiny"
    config["training"]["epochs"] = 5
    config["training"]["k"] = 3
    return config


@pytest.fixture
def sample_lines():
    return list(SAMPLE_LINES)


@pytest.fixture
def small_matrix():
    """Three MovieLens-style users over four items"""
    return parse_movielens(SAMPLE_LINES)


@pytest.fixture
def expert_matrix():
    """Forty experts with structured ratings over twelve items"""
    rng = np.random.default_rng(7)
    taste = rng.normal(size=(40, 2))
    items = rng.normal(size=(12, 2))
    entries = {}
    for u in range(40):
        for j in range(12):
            if rng.random() < 0.6:
                raw = 3.0 + taste[u] @ items[j] + rng.normal(scale=0.3)
                entries[(u, j)] = int(min(5, max(1, round(raw))))
    return RatingMatrix(num_users=40, num_items=12, entries=entries)


@pytest.fixture
def trained_model(expert_matrix):
    """Small model trained for a handful of epochs"""
    cfg = TrainConfig(k=3, learning_rate=0.01, epochs=8, seed=1)
    return train(expert_matrix, [1] * expert_matrix.num_users, cfg)


@pytest.fixture(scope="session")
def paillier_keys():
    """Seeded 1024-bit key pair shared by the whole run"""
    return paillier.keygen(1024, make_rng(11, "tests", "paillier"))


@pytest.fixture(scope="session")
def other_paillier_keys():
    return paillier.keygen(1024, make_rng(12, "tests", "paillier"))


@pytest.fixture(scope="session")
def tiny_swhe():
    return SwheContext(SwheParams.from_profile(TINY_SWHE_PROFILE))


@pytest.fixture(scope="session")
def tiny_swhe_keys(tiny_swhe):
    return tiny_swhe.keygen(make_rng(13, "tests", "swhe"))


@pytest.fixture
def khprf():
    return KhPrf()


@pytest.fixture
def session_spec_fixture():
    """Fixed point as protocol sessions use it"""
    return FixedPointSpec(theta=1000, granularity=10, precision_bits=40, lambda_bits=40)
