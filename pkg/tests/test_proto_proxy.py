"""
Tests for the three-party protocol, driven party by party without the harness
"""

import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from modules import paillier
from modules.counters import PAILLIER_ADD, PAILLIER_DEC, PRF_EVAL, PRF_HADD
from modules.khprf import IDENTITY, KhPrf
from modules.proto_proxy import ProxyParty, ProxyRecSys, ProxySharedSetup, ProxyUser, permute
from modules.protocol_common import ThresholdSet, carry, oracle_recommend
from utils.errors import ProtocolError
from utils.randomness import make_rng

SID = b"\x07" * 16


def _run(spec, keys, xs, ys, rated, thresholds, seed=0):
    pk = keys.public_key
    prf = KhPrf()
    setup = ProxySharedSetup.derive(seed, len(xs), len(thresholds), SID)
    user = ProxyUser(spec, keys, rated, setup, make_rng(seed, "user"), prf)
    recsys = ProxyRecSys(spec, setup, make_rng(seed, "recsys"), make_rng(seed, "r2"), prf)
    proxy = ProxyParty(prf)

    predictions = [paillier.enc(x * spec.unit + y, pk) for x, y in zip(xs, ys)]
    recsys.receive_gammas(user.reduction_reply(recsys.reduction(predictions, pk)))
    proxy.accept_user_shares(user.prf_shares(SID))
    proxy.accept_check_values(user.check_values(thresholds))
    proxy.accept_recsys_shares(recsys.prf_shares(SID))
    return user.interpret(proxy.finish()), user, recsys, proxy


class TestSharedSetup:
    """Test cases for the user/RecSys shared setup"""

    def test_derivation_is_seeded(self):
        a = ProxySharedSetup.derive(3, 5, 2)
        assert a == ProxySharedSetup.derive(3, 5, 2)
        assert a.nonces != ProxySharedSetup.derive(4, 5, 2).nonces
        assert sorted(a.outer) == list(range(5))
        assert all(sorted(row) == [0, 1] for row in a.inner)

    def test_permute(self):
        assert permute(["a", "b", "c"], [2, 0, 1]) == ["c", "a", "b"]


class TestProxySession:
    """Test cases for a full three-party exchange"""

    def test_matches_oracle(self, session_spec_fixture, paillier_keys):
        spec = session_spec_fixture
        thresholds = ThresholdSet.from_values([50, 49])
        xs = [50, 49, 48, 30, 50, 49]
        ys = [0, spec.unit - 1, spec.unit // 2, 5, 7, 0]
        rated = [False, False, False, False, True, False]

        recommended, _, recsys, _ = _run(spec, paillier_keys, xs, ys, rated, thresholds)
        epsilons = [carry(y, recsys.record.r2(j), spec) for j, y in enumerate(ys)]
        assert recommended == oracle_recommend(xs, rated, thresholds, epsilons)

    def test_gamma_shares(self, session_spec_fixture, paillier_keys):
        """Test gamma - r3 = x + eps for unrated items"""
        spec = session_spec_fixture
        xs, ys = [47, 3], [spec.unit - 2, 9]
        _, user, recsys, _ = _run(spec, paillier_keys, xs, ys, [False, False], ThresholdSet.from_values([50]))
        for j, (x, y) in enumerate(zip(xs, ys)):
            eps = carry(y, recsys.record.r2(j), spec)
            assert recsys.gammas[j] - user.share_masks[j] == x + eps

    def test_proxy_view_shape(self, session_spec_fixture, paillier_keys):
        """Test that the proxy sees M shares per side, M rows of T checks and M bits"""
        spec = session_spec_fixture
        thresholds = ThresholdSet.from_values([50, 49, 48])
        _, _, _, proxy = _run(spec, paillier_keys, [50, 10, 10, 10], [0] * 4, [False] * 4, thresholds)
        assert proxy.view.shape() == (4, 4, 4, (3, 3, 3, 3), 1)

    def test_counters(self, session_spec_fixture, paillier_keys):
        spec = session_spec_fixture
        m, thresholds = 4, ThresholdSet.from_values([50, 49])
        _, user, recsys, proxy = _run(spec, paillier_keys, [10] * m, [0] * m, [False] * m, thresholds)
        assert user.ops.as_dict() == {PAILLIER_DEC: m, PRF_EVAL: m * 3}
        assert recsys.ops.as_dict() == {PAILLIER_ADD: m, PRF_EVAL: m}
        assert proxy.ops.as_dict() == {PRF_HADD: m}

    def test_rated_items_excluded(self, session_spec_fixture, paillier_keys):
        spec = session_spec_fixture
        recommended, _, _, _ = _run(spec, paillier_keys, [50, 50], [0, 0], [True, True], ThresholdSet.from_values([50]))
        assert recommended == set()

    @pytest.mark.parametrize("items", [300, pytest.param(10_000, marks=pytest.mark.slow)])
    def test_rated_items_never_match_at_the_proxy(self, items, session_spec_fixture, paillier_keys):
        """Test that rated items sitting exactly on a threshold produce no match bit at all"""
        spec = session_spec_fixture
        thresholds = ThresholdSet.from_values([50, 49])
        rng = make_rng(items, "rated-no-match")
        xs = [int(rng.choice(thresholds.values)) for _ in range(items)]
        recommended, _, _, proxy = _run(spec, paillier_keys, xs, [0] * items, [True] * items, thresholds)
        assert recommended == set()
        assert proxy.view.match_count == 0
        assert sum(proxy.view.result) == 0

    def test_proxy_view_depends_on_match_count_only(self, session_spec_fixture, paillier_keys):
        """Test equal view shapes for different positions, masks and values with one match each"""
        spec = session_spec_fixture
        thresholds = ThresholdSet.from_values([50, 49])
        first = _run(spec, paillier_keys, [50, 10, 10, 10], [0] * 4, [False] * 4, thresholds, seed=1)
        second = _run(spec, paillier_keys, [3, 20, 49, 50], [0] * 4, [False, False, False, True], thresholds, seed=2)
        assert first[0] == {0} and second[0] == {2}
        assert first[3].view.shape() == second[3].view.shape() == (4, 4, 4, (2, 2, 2, 2), 1)


class TestProxyEdgeCases:
    """Test cases for aborts"""

    def test_foreign_session(self, session_spec_fixture, paillier_keys):
        setup = ProxySharedSetup.derive(0, 1, 1, SID)
        user = ProxyUser(session_spec_fixture, paillier_keys, [False], setup, make_rng(0, "u"))
        user.share_masks = [5]
        with pytest.raises(ProtocolError, match="different session"):
            user.prf_shares(b"\x00" * 16)

    def test_shares_before_reduction(self, session_spec_fixture, paillier_keys):
        setup = ProxySharedSetup.derive(0, 2, 1, SID)
        user = ProxyUser(session_spec_fixture, paillier_keys, [False, False], setup, make_rng(0, "u"))
        with pytest.raises(ProtocolError, match="reduction has not completed"):
            user.prf_shares(SID)

    def test_proxy_not_ready(self):
        proxy = ProxyParty()
        proxy.accept_user_shares([])
        assert not proxy.ready
        with pytest.raises(ProtocolError, match="still waiting"):
            proxy.finish()

    def test_share_length_mismatch(self, khprf):
        with pytest.raises(ProtocolError, match="differ in length"):
            ProxyParty(khprf).combine([IDENTITY], [])

    def test_gamma_count(self, session_spec_fixture):
        setup = ProxySharedSetup.derive(0, 1, 1, SID)
        recsys = ProxyRecSys(session_spec_fixture, setup, make_rng(0, "r"), make_rng(0, "r2"))
        with pytest.raises(ProtocolError, match="shares"):
            recsys.receive_gammas([1, 2])

    def test_match_bits_length(self, session_spec_fixture, paillier_keys):
        setup = ProxySharedSetup.derive(0, 2, 1, SID)
        user = ProxyUser(session_spec_fixture, paillier_keys, [False, False], setup, make_rng(0, "u"))
        with pytest.raises(ProtocolError, match="bits for 2 items"):
            user.interpret([1])
