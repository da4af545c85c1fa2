"""
Runs one protocol session with every party on its own thread.

Parties talk only through bounded channels that carry fully encoded wire frames.
Every random draw comes from a labelled stream of the session seed, so the same
seed reproduces the same transcript byte for byte.
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from modules import paillier
from modules.counters import PAILLIER_ENC, PROXY, RECSYS, USER, OpCounters, SessionCounters
from modules.expert_model import EncryptedProfile, ExpertModelParams, encrypted_predict
from modules.khprf import KhPrf
from modules.paillier import PaillierCiphertext, PaillierKeyPair, PaillierPublicKey
from modules.proto_noproxy import NoProxyRecSys, NoProxyUser
from modules.proto_proxy import ProxyParty, ProxyRecSys, ProxySharedSetup, ProxyUser, ProxyView
from modules.protocol_common import (
    FixedPointSpec,
    ReductionRecord,
    ThresholdSet,
    encrypt_profile,
    scale_model,
)
from modules.ratings import profile_mean
from modules.swhe import SwheContext, SwheParams
from modules.wire import (
    Channel,
    Inbox,
    MessageType,
    SessionRegistry,
    SocketChannel,
    Transcript,
    WireMessage,
    decode_bits,
    decode_check_rows,
    decode_int_list,
    decode_paillier_list,
    decode_prf_list,
    decode_profile,
    decode_swhe_list,
    decode_swhe_reply,
    encode_bits,
    encode_check_rows,
    encode_int_list,
    encode_paillier_list,
    encode_prf_list,
    encode_profile,
    encode_swhe_list,
    encode_swhe_reply,
)
from utils.errors import ConfigurationError, SessionError
from utils.randomness import make_rng, random_below

logger = logging.getLogger(__name__)

PROTOCOLS = ("noproxy", "proxy")
TRANSPORTS = ("memory", "socket")


@dataclass
class SyntheticInstance:
    """Encoded predictions x * unit + y and the user's rated mask, with no model behind them."""

    values: list[int]
    rated: list[bool]

    def __len__(self) -> int:
        return len(self.values)

    def x_values(self, spec: FixedPointSpec) -> list[int]:
        return [v // spec.unit for v in self.values]

    def y_values(self, spec: FixedPointSpec) -> list[int]:
        return [v % spec.unit for v in self.values]


def make_instance(
    rng: np.random.Generator,
    items: int,
    thresholds: ThresholdSet,
    spec: FixedPointSpec,
    rated_fraction: float = 0.25,
    max_x: int = 60,
) -> SyntheticInstance:
    """Random instance with x values clustered around the thresholds so every case shows up."""
    near = sorted({max(0, v + d) for v in thresholds.values for d in (-2, -1, 0, 1)})
    values, rated = [], []
    for _ in range(items):
        if rng.random() < 0.6:
            x = near[int(rng.integers(len(near)))]
        else:
            x = int(rng.integers(0, max_x + 1))
        values.append(x * spec.unit + random_below(rng, spec.unit))
        rated.append(bool(rng.random() < rated_fraction))
    return SyntheticInstance(values, rated)


@dataclass
class SessionResult:
    protocol: str
    recommended: set[int]
    transcript: Transcript
    counters: SessionCounters
    items: int
    thresholds: ThresholdSet
    slots: int | None
    session_id: bytes
    record: ReductionRecord = field(default_factory=ReductionRecord)
    user_state: Any = None
    recsys_state: Any = None
    proxy_view: ProxyView | None = None


def session_spec(config: dict[str, Any]) -> FixedPointSpec:
    return FixedPointSpec.from_config(config)


def swhe_context_from_config(config: dict[str, Any], profile: str | None = None) -> SwheContext:
    section = config.get("swhe", {})
    name = profile or section.get("profile", "desk")
    profiles = section.get("profiles", {})
    params = SwheParams.from_profile({**profiles[name], "name": name} if name in profiles else name)
    return SwheContext(params)


class _Party(threading.Thread):
    """Thread wrapper that records the failure and the message type being handled."""

    def __init__(self, name: str, target: Callable[["_Party"], Any], on_failure: Callable[[], None]):
        super().__init__(name=name, daemon=True)
        self._target_fn = target
        self._on_failure = on_failure
        self.current: MessageType | None = None
        self.result: Any = None
        self.error: Exception | None = None

    def run(self):
        try:
            self.result = self._target_fn(self)
        except Exception as e:
            self.error = e
            logger.error(f"{self.name} aborted while handling {self.current.name if self.current else 'setup'}: {e}")
            self._on_failure()


class SessionRunner:
    def __init__(
        self,
        protocol: str,
        config: dict[str, Any],
        thresholds: ThresholdSet,
        seed: int | None,
        batched: bool = True,
        swhe_context: SwheContext | None = None,
        paillier_keys: PaillierKeyPair | None = None,
        registry: SessionRegistry | None = None,
    ):
        if protocol not in PROTOCOLS:
            raise ConfigurationError(f"unknown protocol '{protocol}' (expected one of {', '.join(PROTOCOLS)})")
        harness_config = config.get("harness", {})
        self.transport = harness_config.get("transport", "memory")
        if self.transport not in TRANSPORTS:
            raise ConfigurationError(
                f"unknown transport '{self.transport}' (expected one of {', '.join(TRANSPORTS)})"
            )
        self.protocol = protocol
        self.config = config
        self.thresholds = thresholds
        # without a seed every stream is private: one fresh session seed keeps the
        # user/RecSys shared setup consistent, and keys come straight from OS entropy
        self.seeded = seed is not None
        self.seed = seed if self.seeded else int(np.random.SeedSequence().entropy)
        self.batched = batched
        self.spec = session_spec(config)
        self.key_bits = int(config.get("paillier", {}).get("key_bits", paillier.DEFAULT_KEY_BITS))
        self.capacity = int(harness_config.get("channel_capacity", 4))
        self.timeout = float(harness_config.get("timeout_seconds", 600))
        max_rating = int(config.get("ratings", {}).get("max_rating", 5))
        self.max_x = max((max_rating + 1) * self.spec.granularity, max(thresholds.values) + 2)
        self.swhe = swhe_context if swhe_context is not None else (
            swhe_context_from_config(config) if protocol == "noproxy" else None
        )
        self.paillier_keys = paillier_keys
        self.session_id = make_rng(seed, "session-id").bytes(16)
        (registry or SessionRegistry()).open(self.session_id)

        self.transcript = Transcript()
        self.counters = SessionCounters()
        self._lock = threading.Lock()
        self.to_user = self._channel("to-user")
        self.to_recsys = self._channel("to-recsys")
        self.to_proxy = self._channel("to-proxy")

    def rng(self, *labels: str) -> np.random.Generator:
        return make_rng(self.seed, *labels)

    def _channel(self, name: str) -> Channel | SocketChannel:
        if self.transport == "socket":
            return SocketChannel(name, self.timeout)
        return Channel(name, self.capacity, self.timeout)

    # -- plumbing --------------------------------------------------------------

    def _send(self, channel: Channel | SocketChannel, message_type: MessageType, payload: bytes) -> None:
        message = WireMessage(self.session_id, message_type, payload)
        with self._lock:
            self.transcript.record(message)
        channel.send(message)

    def _recv(
        self, party: _Party, channel: Channel | SocketChannel, inbox: Inbox, expected: MessageType | None = None
    ) -> WireMessage:
        message = inbox.admit(channel.recv())
        party.current = message.message_type
        if expected is not None and message.message_type != expected:
            raise SessionError(f"expected {expected.name}", message.message_type.name)
        return message

    def _close_all(self) -> None:
        for channel in (self.to_user, self.to_recsys, self.to_proxy):
            channel.close()

    def _release_all(self) -> None:
        for channel in (self.to_user, self.to_recsys, self.to_proxy):
            if isinstance(channel, SocketChannel):
                channel.release()

    # -- parties ---------------------------------------------------------------

    def _user_keys(self) -> PaillierKeyPair:
        if self.paillier_keys is not None:
            return self.paillier_keys
        return paillier.keygen(self.key_bits, self.rng("user", "paillier-keygen") if self.seeded else None)

    def _user(self, party: _Party, rated: list[bool], profile_fn) -> tuple[set[int], NoProxyUser | ProxyUser]:
        inbox = Inbox(self.session_id)
        rng = self.rng("user", "protocol")
        keys = self._user_keys()
        prep = OpCounters(USER)

        profile: EncryptedProfile | None = profile_fn(keys.public_key, prep) if profile_fn else None
        payload = encode_profile(
            keys.public_key,
            profile.scale if profile else None,
            profile.mean if profile else None,
            profile.ratings if profile else [],
        )
        self._send(self.to_recsys, MessageType.ENCRYPTED_PROFILE, payload)

        masked = decode_paillier_list(
            self._recv(party, self.to_user, inbox, MessageType.REDUCE_MASKED).payload, MessageType.REDUCE_MASKED
        )

        if self.protocol == "noproxy":
            swhe_keys = self.swhe.keygen(self.rng("user", "swhe-keygen"))
            user = NoProxyUser(self.spec, self.swhe, keys, swhe_keys, rated, rng, self.batched)
            replies = user.reduction_reply(masked)
            with self._lock:
                self.counters.physical_ciphertexts = len(replies)
            self._send(self.to_recsys, MessageType.REDUCE_REPLY, encode_swhe_reply(self.swhe, user.evaluation_key, replies))
            results = decode_swhe_list(self.swhe, self._recv(party, self.to_user, inbox, MessageType.EVAL_RESULT).payload)
            recommended = user.select(results)
        else:
            setup = ProxySharedSetup.derive(self.seed, len(rated), len(self.thresholds), self.session_id)
            user = ProxyUser(self.spec, keys, rated, setup, rng, KhPrf(self.config))
            gammas = user.reduction_reply(masked)
            self._send(self.to_recsys, MessageType.REDUCE_REPLY, encode_int_list(gammas))
            self._send(self.to_proxy, MessageType.PRF_SHARES_USER, encode_prf_list(user.prf_shares(self.session_id)))
            self._send(self.to_proxy, MessageType.CHECK_VALUES, encode_check_rows(user.check_values(self.thresholds)))
            bits = decode_bits(self._recv(party, self.to_user, inbox, MessageType.MATCH_RESULT).payload)
            recommended = user.interpret(bits)

        with self._lock:
            self.counters.merge(USER, user.ops)
            self.counters.merge(USER, prep, preparation=True)
        return recommended, user

    def _recsys(self, party: _Party, predict_fn) -> Any:
        inbox = Inbox(self.session_id)
        rng = self.rng("recsys", "protocol")
        r2_rng = self.rng("recsys", "r2")
        prep = OpCounters(RECSYS)

        pk, scale, mean, ratings = decode_profile(
            self._recv(party, self.to_recsys, inbox, MessageType.ENCRYPTED_PROFILE).payload
        )
        profile = EncryptedProfile(ratings, mean, scale) if mean is not None else None
        predictions = predict_fn(pk, profile, prep)

        if self.protocol == "noproxy":
            recsys = NoProxyRecSys(
                self.spec, self.thresholds, self.swhe, rng, r2_rng, self.batched, max_x=self.max_x
            )
            masked = recsys.reduction(predictions, pk)
            self._send(self.to_user, MessageType.REDUCE_MASKED, encode_paillier_list(masked, pk))
            key, replies = decode_swhe_reply(
                self.swhe, self._recv(party, self.to_recsys, inbox, MessageType.REDUCE_REPLY).payload
            )
            results = recsys.evaluate(replies, key)
            self._send(self.to_user, MessageType.EVAL_RESULT, encode_swhe_list(self.swhe, results))
        else:
            setup = ProxySharedSetup.derive(self.seed, len(predictions), len(self.thresholds), self.session_id)
            recsys = ProxyRecSys(self.spec, setup, rng, r2_rng, KhPrf(self.config), max_x=self.max_x)
            masked = recsys.reduction(predictions, pk)
            self._send(self.to_user, MessageType.REDUCE_MASKED, encode_paillier_list(masked, pk))
            gammas = decode_int_list(
                self._recv(party, self.to_recsys, inbox, MessageType.REDUCE_REPLY).payload, MessageType.REDUCE_REPLY
            )
            recsys.receive_gammas(gammas)
            self._send(self.to_proxy, MessageType.PRF_SHARES_RECSYS, encode_prf_list(recsys.prf_shares(self.session_id)))

        with self._lock:
            self.counters.merge(RECSYS, recsys.ops)
            self.counters.merge(RECSYS, prep, preparation=True)
        return recsys

    def _proxy(self, party: _Party) -> ProxyView:
        inbox = Inbox(self.session_id)
        proxy = ProxyParty(KhPrf(self.config))
        while not proxy.ready:
            message = self._recv(party, self.to_proxy, inbox)
            if message.message_type == MessageType.PRF_SHARES_USER:
                proxy.accept_user_shares(decode_prf_list(message.payload, message.message_type))
            elif message.message_type == MessageType.PRF_SHARES_RECSYS:
                proxy.accept_recsys_shares(decode_prf_list(message.payload, message.message_type))
            elif message.message_type == MessageType.CHECK_VALUES:
                proxy.accept_check_values(decode_check_rows(message.payload))
            else:
                raise SessionError("unexpected message at the proxy", message.message_type.name)
        bits = proxy.finish()
        self._send(self.to_user, MessageType.MATCH_RESULT, encode_bits(bits))
        with self._lock:
            self.counters.merge(PROXY, proxy.ops)
        return proxy.view

    # -- session ---------------------------------------------------------------

    def run(self, rated: list[bool], profile_fn, predict_fn) -> SessionResult:
        logger.info(
            f"Session {self.session_id.hex()[:8]}: {self.protocol}, M={len(rated)}, T={len(self.thresholds)}, "
            f"{'batched' if self.batched else 'unbatched'}"
        )
        parties = [
            _Party("user", lambda p: self._user(p, rated, profile_fn), self._close_all),
            _Party("recsys", lambda p: self._recsys(p, predict_fn), self._close_all),
        ]
        if self.protocol == "proxy":
            parties.append(_Party("proxy", self._proxy, self._close_all))

        try:
            for party in parties:
                party.start()
            for party in parties:
                party.join()
        finally:
            self._release_all()

        failed = [p for p in parties if p.error is not None]
        if failed:
            # the first party to fail is the one whose error is not a closed-channel consequence
            primary = next(
                (p for p in failed if not (isinstance(p.error, SessionError) and "closed" in str(p.error))), failed[0]
            )
            if isinstance(primary.error, ConfigurationError):
                raise primary.error
            message_type = primary.current.name if primary.current else None
            if isinstance(primary.error, SessionError):
                raise primary.error
            raise SessionError(f"{primary.name} aborted: {primary.error}", message_type) from primary.error

        recommended, user_state = parties[0].result
        recsys_state = parties[1].result
        return SessionResult(
            protocol=self.protocol,
            recommended=recommended,
            transcript=self.transcript,
            counters=self.counters,
            items=len(rated),
            thresholds=self.thresholds,
            slots=self.swhe.slot_count if (self.swhe is not None and self.batched) else None,
            session_id=self.session_id,
            record=recsys_state.record,
            user_state=user_state,
            recsys_state=recsys_state,
            proxy_view=parties[2].result if len(parties) > 2 else None,
        )


def run_session(
    protocol: str,
    config: dict[str, Any],
    thresholds: ThresholdSet,
    seed: int | None = None,
    *,
    model: ExpertModelParams | None = None,
    user_ratings: np.ndarray | None = None,
    instance: SyntheticInstance | None = None,
    batched: bool = True,
    swhe_context: SwheContext | None = None,
    paillier_keys: PaillierKeyPair | None = None,
    registry: SessionRegistry | None = None,
) -> SessionResult:
    """Run one session either on a trained model plus a rating vector, or on a synthetic instance."""
    runner = SessionRunner(protocol, config, thresholds, seed, batched, swhe_context, paillier_keys, registry)

    if model is not None:
        if user_ratings is None:
            raise ConfigurationError("a model session needs the user's rating vector")
        ratings = np.asarray(user_ratings, dtype=np.float64)
        if ratings.shape != (model.num_items,):
            raise ConfigurationError(f"user vector has {ratings.size} entries, model has {model.num_items} items")
        rated = [bool(r) for r in ratings]
        mean = profile_mean(ratings, model.stats.global_mean)
        scaled = scale_model(model, runner.spec)
        items = list(range(model.num_items))

        def profile_fn(pk: PaillierPublicKey, ops: OpCounters) -> EncryptedProfile:
            return encrypt_profile(ratings, mean, runner.spec, pk, runner.rng("user", "profile"), ops)

        def predict_fn(pk: PaillierPublicKey, profile: EncryptedProfile | None, ops: OpCounters):
            if profile is None:
                raise SessionError("model session without an encrypted profile", MessageType.ENCRYPTED_PROFILE.name)
            return encrypted_predict(scaled, profile, items, pk, ops)

    elif instance is not None:
        rated = list(instance.rated)
        profile_fn = None
        values = list(instance.values)

        def predict_fn(pk: PaillierPublicKey, profile, ops: OpCounters) -> list[PaillierCiphertext]:
            rng = runner.rng("recsys", "synthetic-predictions")
            ops.bump(PAILLIER_ENC, len(values))
            return [paillier.enc(v, pk, rng) for v in values]

    else:
        raise ConfigurationError("run_session needs either a model and user vector or a synthetic instance")

    return runner.run(rated, profile_fn, predict_fn)
