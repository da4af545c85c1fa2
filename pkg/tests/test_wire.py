"""
Tests for wire framing, payload codecs and transports
"""

import os
import socket
import struct
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from modules import paillier
from modules.khprf import IDENTITY, PrfKey
from modules.wire import (
    HEADER,
    MAX_PAYLOAD_SIZE,
    Channel,
    Inbox,
    MessageType,
    SessionRegistry,
    SocketChannel,
    SocketTransport,
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
from utils.errors import FramingError, SessionError
from utils.randomness import make_rng

SID = bytes(range(16))
OTHER_SID = bytes(16)


class TestFraming:
    """Test cases for frame encoding"""

    def test_layout(self):
        frame = WireMessage(SID, MessageType.MATCH_RESULT, b"abc").to_bytes()
        assert frame[:4] == b"RSHD"
        assert frame[4] == 1
        assert frame[5:21] == SID
        assert frame[21] == MessageType.MATCH_RESULT
        assert struct.unpack_from("<I", frame, 22) == (3,)
        assert frame[HEADER.size :] == b"abc"

    def test_parse_back(self):
        message = WireMessage(SID, MessageType.CHECK_VALUES, b"\x00" * 10)
        parsed, end = WireMessage.from_bytes(message.to_bytes())
        assert parsed == message
        assert end == HEADER.size + 10

    def test_session_id_length(self):
        with pytest.raises(FramingError, match="session id"):
            WireMessage(b"short", MessageType.MATCH_RESULT, b"")

    def test_bad_magic(self):
        frame = bytearray(WireMessage(SID, MessageType.MATCH_RESULT, b"").to_bytes())
        frame[0:4] = b"XXXX"
        with pytest.raises(FramingError, match="magic"):
            WireMessage.from_bytes(bytes(frame))

    def test_bad_version(self):
        frame = bytearray(WireMessage(SID, MessageType.MATCH_RESULT, b"").to_bytes())
        frame[4] = 9
        with pytest.raises(FramingError, match="version"):
            WireMessage.from_bytes(bytes(frame))

    def test_unknown_type(self):
        frame = bytearray(WireMessage(SID, MessageType.MATCH_RESULT, b"").to_bytes())
        frame[21] = 0x7F
        with pytest.raises(FramingError, match="unknown message type"):
            WireMessage.from_bytes(bytes(frame))

    def test_truncated_payload(self):
        frame = WireMessage(SID, MessageType.MATCH_RESULT, b"12345").to_bytes()
        with pytest.raises(FramingError, match="truncated"):
            WireMessage.from_bytes(frame[:-1])

    def test_oversized_length(self):
        header = HEADER.pack(b"RSHD", 1, SID, int(MessageType.MATCH_RESULT), MAX_PAYLOAD_SIZE + 1)
        with pytest.raises(FramingError, match="too large"):
            WireMessage.parse_header(header)

    def test_short_header(self):
        with pytest.raises(FramingError, match="header too short"):
            WireMessage.parse_header(b"RSHD")


class TestCodecs:
    """Test cases for payload codecs"""

    def test_paillier_list(self, paillier_keys):
        pk = paillier_keys.public_key
        cts = [paillier.enc(v, pk) for v in (1, 2, 3)]
        assert decode_paillier_list(encode_paillier_list(cts)) == cts

    def test_paillier_list_fixed_width(self, paillier_keys):
        """Test that every ciphertext takes the width of n^2 whatever its value"""
        pk = paillier_keys.public_key
        cts = [paillier.PaillierCiphertext(v, pk.fingerprint) for v in (1, 2**100, pk.nsquare - 1)]
        payload = encode_paillier_list(cts, pk)
        assert len(payload) == 4 + 3 * (2 + pk.ciphertext_bytes + 8)
        assert decode_paillier_list(payload) == cts

    def test_paillier_list_trailing_bytes(self, paillier_keys):
        payload = encode_paillier_list([paillier.enc(1, paillier_keys.public_key)]) + b"\x00"
        with pytest.raises(FramingError, match="REDUCE_MASKED: 1 trailing bytes"):
            decode_paillier_list(payload, MessageType.REDUCE_MASKED)

    def test_profile_with_and_without_model(self, paillier_keys):
        pk = paillier_keys.public_key
        key, scale, mean, ratings = decode_profile(encode_profile(pk, None, None, []))
        assert key == pk
        assert mean is None and ratings == []

        cts = [paillier.enc(v, pk) for v in (0, 5)]
        mean_ct = paillier.enc(42, pk)
        key, scale, mean, ratings = decode_profile(encode_profile(pk, 10000 << 40, mean_ct, cts))
        assert scale == 10000 << 40
        assert mean == mean_ct
        assert ratings == cts

    def test_int_list_signed(self):
        values = [0, -1, 2**200, -(2**90) + 3]
        assert decode_int_list(encode_int_list(values)) == values

    def test_int_list_truncated(self):
        with pytest.raises(FramingError, match="truncated"):
            decode_int_list(encode_int_list([2**64])[:-2])

    def test_prf_list(self, khprf):
        outputs = [IDENTITY, khprf.evaluate(PrfKey.of(9), b"m")]
        assert decode_prf_list(encode_prf_list(outputs)) == outputs

    def test_check_rows(self):
        rows = [[b"a" * 16, b"b" * 16], [b"c" * 16, b"d" * 16]]
        assert decode_check_rows(encode_check_rows(rows)) == rows
        with pytest.raises(FramingError, match="rectangular"):
            encode_check_rows([[b"a" * 16], [b"b" * 8]])

    def test_bits(self):
        assert decode_bits(encode_bits([1, 0, 1])) == [1, 0, 1]
        with pytest.raises(FramingError, match="0 or 1"):
            decode_bits(struct.pack("<I", 1) + b"\x02")

    def test_swhe_reply_and_list(self, tiny_swhe, tiny_swhe_keys):
        ct = tiny_swhe.encrypt(tiny_swhe.encode([3, 4]), tiny_swhe_keys, make_rng(1, "wire"))
        key, cts = decode_swhe_reply(tiny_swhe, encode_swhe_reply(tiny_swhe, tiny_swhe_keys.evaluation_key, [ct]))
        assert key.fingerprint == tiny_swhe_keys.fingerprint
        assert tiny_swhe.decode(tiny_swhe.decrypt(cts[0], tiny_swhe_keys), 2) == [3, 4]

        (restored,) = decode_swhe_list(tiny_swhe, encode_swhe_list(tiny_swhe, [ct]))
        assert tiny_swhe.decode(tiny_swhe.decrypt(restored, tiny_swhe_keys), 2) == [3, 4]

    def test_swhe_list_garbage(self, tiny_swhe):
        payload = struct.pack("<I", 1) + struct.pack("<I", 4) + b"JUNK"
        with pytest.raises(FramingError, match="EVAL_RESULT"):
            decode_swhe_list(tiny_swhe, payload)


class TestSessions:
    """Test cases for session bookkeeping"""

    def test_registry_rejects_reuse(self):
        registry = SessionRegistry()
        registry.open(SID)
        registry.open(OTHER_SID)
        with pytest.raises(SessionError, match="already used"):
            registry.open(SID)

    def test_inbox(self):
        inbox = Inbox(SID)
        inbox.admit(WireMessage(SID, MessageType.REDUCE_MASKED, b""))
        with pytest.raises(SessionError) as info:
            inbox.admit(WireMessage(SID, MessageType.REDUCE_MASKED, b""))
        assert info.value.message_type == "REDUCE_MASKED"
        with pytest.raises(SessionError, match="another session"):
            inbox.admit(WireMessage(OTHER_SID, MessageType.EVAL_RESULT, b""))


class TestTransports:
    """Test cases for Channel, SocketTransport and Transcript"""

    def test_channel(self):
        channel = Channel("user->recsys", timeout=1.0)
        message = WireMessage(SID, MessageType.PRF_SHARES_USER, b"xyz")
        channel.send(message)
        assert channel.recv() == message

    def test_channel_close_wakes_receiver(self):
        channel = Channel("c", timeout=1.0)
        channel.close()
        with pytest.raises(SessionError, match="closed"):
            channel.recv()

    def test_channel_timeout(self):
        with pytest.raises(SessionError, match="timed out"):
            Channel("c", timeout=0.01).recv()

    def test_socket_transport(self):
        left, right = socket.socketpair()
        a, b = SocketTransport(left), SocketTransport(right)
        try:
            message = WireMessage(SID, MessageType.MATCH_RESULT, encode_bits([1, 1, 0]))
            a.send(message)
            a.send(WireMessage(SID, MessageType.CHECK_VALUES, b""))
            assert b.recv() == message
            assert b.recv().payload == b""
        finally:
            a.close()
            b.close()

    def test_socket_closed_mid_frame(self):
        left, right = socket.socketpair()
        left.sendall(WireMessage(SID, MessageType.MATCH_RESULT, b"12345").to_bytes()[:-2])
        left.close()
        with pytest.raises(FramingError, match="closed mid-frame"):
            SocketTransport(right).recv()
        right.close()

    def test_socket_channel(self):
        channel = SocketChannel("to-proxy", timeout=1.0)
        try:
            first = WireMessage(SID, MessageType.PRF_SHARES_USER, b"xyz" * 1000)
            second = WireMessage(SID, MessageType.CHECK_VALUES, b"")
            channel.send(first)
            channel.send(second)
            assert channel.recv() == first
            assert channel.recv() == second
        finally:
            channel.release()

    def test_socket_channel_close_wakes_receiver(self):
        channel = SocketChannel("c", timeout=1.0)
        try:
            channel.close()
            channel.close()
            with pytest.raises(SessionError, match="closed by the peer"):
                channel.recv()
            with pytest.raises(SessionError, match="closed by the peer"):
                channel.send(WireMessage(SID, MessageType.MATCH_RESULT, b""))
        finally:
            channel.release()

    def test_socket_channel_timeout(self):
        channel = SocketChannel("c", timeout=0.01)
        try:
            with pytest.raises(SessionError, match="timed out"):
                channel.recv()
        finally:
            channel.release()

    def test_transcript_canonical_order(self):
        later = WireMessage(SID, MessageType.MATCH_RESULT, b"\x01")
        earlier = WireMessage(SID, MessageType.ENCRYPTED_PROFILE, b"\x02\x03")
        transcript = Transcript()
        transcript.record(later)
        transcript.record(earlier)
        assert transcript.types() == [MessageType.ENCRYPTED_PROFILE, MessageType.MATCH_RESULT]
        assert transcript.sizes() == {"ENCRYPTED_PROFILE": 2, "MATCH_RESULT": 1}
        assert transcript.get(MessageType.MATCH_RESULT) == later
        assert transcript.get(MessageType.EVAL_RESULT) is None

        restored = Transcript.from_bytes(transcript.to_bytes())
        assert restored.messages == transcript.messages


class TestMalformedInput:
    """Random frames, cut short or with flipped bytes, only ever fail with FramingError"""

    TRIALS = 10_000

    def _random_message(self, rng):
        session_id = bytes(rng.integers(0, 256, size=16, dtype="uint8"))
        message_type = MessageType(int(rng.integers(1, 9)))
        payload = bytes(rng.integers(0, 256, size=int(rng.integers(0, 65)), dtype="uint8"))
        return WireMessage(session_id, message_type, payload)

    def test_random_frames_parse_back(self):
        rng = make_rng(41, "wire", "frames")
        for _ in range(self.TRIALS):
            message = self._random_message(rng)
            frame = message.to_bytes()
            parsed, end = WireMessage.from_bytes(frame)
            assert parsed == message
            assert end == len(frame)

    def test_truncated_frames_rejected(self):
        rng = make_rng(42, "wire", "truncated")
        for _ in range(self.TRIALS):
            frame = self._random_message(rng).to_bytes()
            cut = int(rng.integers(0, len(frame)))
            with pytest.raises(FramingError):
                WireMessage.from_bytes(frame[:cut])

    def test_tampered_frames(self):
        """Test that a flipped byte either fails framing or still yields a well-formed message"""
        rng = make_rng(43, "wire", "tampered")
        rejected = 0
        for _ in range(self.TRIALS):
            message = self._random_message(rng)
            frame = bytearray(message.to_bytes())
            position = int(rng.integers(0, len(frame)))
            frame[position] ^= int(rng.integers(1, 256))
            try:
                transcript = Transcript.from_bytes(bytes(frame))
            except FramingError:
                rejected += 1
                continue
            assert all(len(m.session_id) == 16 for m in transcript.messages)
            if position < 4:
                pytest.fail("a frame with a damaged magic was accepted")
        assert rejected > 0

    def test_tampered_payloads(self, khprf):
        """Test payload decoders on flipped bytes: a value or FramingError, nothing else"""
        rng = make_rng(44, "wire", "payloads")
        payloads = [
            (encode_int_list([3, -7, 2**70]), decode_int_list),
            (encode_prf_list([IDENTITY, khprf.evaluate(PrfKey.of(5), b"m")]), decode_prf_list),
            (encode_check_rows([[b"a" * 16, b"b" * 16]]), decode_check_rows),
            (encode_bits([1, 0, 1, 1]), decode_bits),
        ]
        for trial in range(self.TRIALS):
            payload, decoder = payloads[trial % len(payloads)]
            tampered = bytearray(payload)
            tampered[int(rng.integers(0, len(tampered)))] ^= int(rng.integers(1, 256))
            try:
                decoder(bytes(tampered))
            except FramingError:
                pass
