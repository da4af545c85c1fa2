"""
Length-prefixed binary framing shared by every party.

Frame layout (little-endian):
    [4 bytes  - magic "RSHD"]
    [1 byte   - version]
    [16 bytes - session id]
    [1 byte   - message type]
    [4 bytes  - payload length]
    [N bytes  - payload]
"""

import logging
import queue
import socket
import struct
from dataclasses import dataclass, field
from enum import IntEnum

from modules.khprf import OUTPUT_BYTES, PrfOutput
from modules.paillier import PaillierCiphertext, PaillierPublicKey
from modules.swhe import SwheCiphertext, SwheContext, SwheEvaluationKey
from utils.errors import FramingError, SessionError

logger = logging.getLogger(__name__)

MAGIC = b"RSHD"
VERSION = 1
SESSION_ID_BYTES = 16
HEADER = struct.Struct("<4sB16sBI")
MAX_PAYLOAD_SIZE = 256 * 1024 * 1024


class MessageType(IntEnum):
    ENCRYPTED_PROFILE = 0x01
    REDUCE_MASKED = 0x02
    REDUCE_REPLY = 0x03
    EVAL_RESULT = 0x04
    PRF_SHARES_USER = 0x05
    PRF_SHARES_RECSYS = 0x06
    CHECK_VALUES = 0x07
    MATCH_RESULT = 0x08


@dataclass(frozen=True)
class WireMessage:
    session_id: bytes
    message_type: MessageType
    payload: bytes

    def __post_init__(self):
        if len(self.session_id) != SESSION_ID_BYTES:
            raise FramingError(f"session id must be {SESSION_ID_BYTES} bytes")

    def to_bytes(self) -> bytes:
        header = HEADER.pack(MAGIC, VERSION, self.session_id, int(self.message_type), len(self.payload))
        return header + self.payload

    @staticmethod
    def parse_header(header: bytes) -> tuple[bytes, MessageType, int]:
        if len(header) < HEADER.size:
            raise FramingError("header too short")
        magic, version, session_id, raw_type, length = HEADER.unpack_from(header)
        if magic != MAGIC:
            raise FramingError(f"bad magic {magic!r}")
        if version != VERSION:
            raise FramingError(f"unsupported wire version {version}")
        try:
            message_type = MessageType(raw_type)
        except ValueError:
            raise FramingError(f"unknown message type 0x{raw_type:02x}") from None
        if length > MAX_PAYLOAD_SIZE:
            raise FramingError(f"payload too large: {length}")
        return session_id, message_type, length

    @classmethod
    def from_bytes(cls, data: bytes, offset: int = 0) -> tuple["WireMessage", int]:
        session_id, message_type, length = cls.parse_header(data[offset : offset + HEADER.size])
        start = offset + HEADER.size
        payload = data[start : start + length]
        if len(payload) != length:
            raise FramingError(f"{message_type.name} payload truncated: {len(payload)} of {length} bytes")
        return cls(session_id, message_type, bytes(payload)), start + length


# -- payload codecs -----------------------------------------------------------------


class PayloadReader:
    def __init__(self, data: bytes, message_type: MessageType | None = None):
        self.data = data
        self.offset = 0
        self.message_type = message_type

    def _fail(self, what: str) -> FramingError:
        name = self.message_type.name if self.message_type is not None else "payload"
        return FramingError(f"{name}: {what}")

    def unpack(self, fmt: str) -> tuple:
        try:
            values = struct.unpack_from(fmt, self.data, self.offset)
        except struct.error:
            raise self._fail("truncated field") from None
        self.offset += struct.calcsize(fmt)
        return values

    def take(self, length: int) -> bytes:
        chunk = self.data[self.offset : self.offset + length]
        if len(chunk) != length:
            raise self._fail("truncated field")
        self.offset += length
        return chunk

    def blob(self) -> bytes:
        (length,) = self.unpack("<I")
        return self.take(length)

    def call(self, parser, *args):
        try:
            value, self.offset = parser(self.data, self.offset, *args)
        except (ValueError, struct.error) as e:
            raise self._fail(str(e)) from e
        return value

    def finish(self) -> None:
        if self.offset != len(self.data):
            raise self._fail(f"{len(self.data) - self.offset} trailing bytes")


def _blob(data: bytes) -> bytes:
    return struct.pack("<I", len(data)) + data


def _signed_int(value: int) -> bytes:
    raw = value.to_bytes((value.bit_length() + 8) // 8 or 1, "big", signed=True)
    return struct.pack("<H", len(raw)) + raw


def encode_paillier_list(cts: list[PaillierCiphertext], pk: PaillierPublicKey | None = None) -> bytes:
    """With ``pk`` every ciphertext is padded to the width of n^2, so sizes carry no information."""
    width = pk.ciphertext_bytes if pk is not None else None
    return struct.pack("<I", len(cts)) + b"".join(ct.to_bytes(width) for ct in cts)


def _read_paillier_list(reader: PayloadReader) -> list[PaillierCiphertext]:
    (count,) = reader.unpack("<I")
    return [reader.call(PaillierCiphertext.from_bytes) for _ in range(count)]


def decode_paillier_list(payload: bytes, message_type: MessageType | None = None) -> list[PaillierCiphertext]:
    reader = PayloadReader(payload, message_type)
    cts = _read_paillier_list(reader)
    reader.finish()
    return cts


def encode_profile(
    pk: PaillierPublicKey, scale: int | None, mean: PaillierCiphertext | None, ratings: list[PaillierCiphertext]
) -> bytes:
    """ENCRYPTED_PROFILE: the user's public key and, when a model is in play, its encrypted profile."""
    parts = [pk.to_bytes(), struct.pack("<B", 1 if mean is not None else 0)]
    if mean is not None:
        parts += [_signed_int(scale), mean.to_bytes(pk.ciphertext_bytes), encode_paillier_list(ratings, pk)]
    return b"".join(parts)


def decode_profile(payload: bytes):
    reader = PayloadReader(payload, MessageType.ENCRYPTED_PROFILE)
    pk = reader.call(PaillierPublicKey.from_bytes)
    (has_profile,) = reader.unpack("<B")
    scale, mean, ratings = None, None, []
    if has_profile:
        (length,) = reader.unpack("<H")
        scale = int.from_bytes(reader.take(length), "big", signed=True)
        mean = reader.call(PaillierCiphertext.from_bytes)
        ratings = _read_paillier_list(reader)
    reader.finish()
    return pk, scale, mean, ratings


def encode_swhe_reply(context: SwheContext, key: SwheEvaluationKey, cts: list[SwheCiphertext]) -> bytes:
    parts = [_blob(context.serialize_evaluation_key(key)), struct.pack("<I", len(cts))]
    parts.extend(_blob(context.serialize(ct)) for ct in cts)
    return b"".join(parts)


def decode_swhe_reply(context: SwheContext, payload: bytes) -> tuple[SwheEvaluationKey, list[SwheCiphertext]]:
    reader = PayloadReader(payload, MessageType.REDUCE_REPLY)
    key = PayloadReader(reader.blob(), MessageType.REDUCE_REPLY).call(context.deserialize_evaluation_key)
    cts = _read_swhe(context, reader)
    reader.finish()
    return key, cts


def encode_swhe_list(context: SwheContext, cts: list[SwheCiphertext]) -> bytes:
    return struct.pack("<I", len(cts)) + b"".join(_blob(context.serialize(ct)) for ct in cts)


def _read_swhe(context: SwheContext, reader: PayloadReader) -> list[SwheCiphertext]:
    (count,) = reader.unpack("<I")
    return [PayloadReader(reader.blob(), reader.message_type).call(context.deserialize) for _ in range(count)]


def decode_swhe_list(context: SwheContext, payload: bytes) -> list[SwheCiphertext]:
    reader = PayloadReader(payload, MessageType.EVAL_RESULT)
    cts = _read_swhe(context, reader)
    reader.finish()
    return cts


def encode_int_list(values: list[int]) -> bytes:
    return struct.pack("<I", len(values)) + b"".join(_signed_int(v) for v in values)


def decode_int_list(payload: bytes, message_type: MessageType | None = None) -> list[int]:
    reader = PayloadReader(payload, message_type)
    (count,) = reader.unpack("<I")
    values = []
    for _ in range(count):
        (length,) = reader.unpack("<H")
        values.append(int.from_bytes(reader.take(length), "big", signed=True))
    reader.finish()
    return values


def encode_prf_list(outputs: list[PrfOutput]) -> bytes:
    return struct.pack("<I", len(outputs)) + b"".join(out.to_bytes() for out in outputs)


def decode_prf_list(payload: bytes, message_type: MessageType | None = None) -> list[PrfOutput]:
    reader = PayloadReader(payload, message_type)
    (count,) = reader.unpack("<I")
    outputs = [reader.call(PrfOutput.from_bytes) for _ in range(count)]
    reader.finish()
    return outputs


def encode_check_rows(rows: list[list[bytes]]) -> bytes:
    width = len(rows[0]) if rows else 0
    check_len = len(rows[0][0]) if rows and rows[0] else 0
    parts = [struct.pack("<IBB", len(rows), width, check_len)]
    for row in rows:
        if len(row) != width or any(len(h) != check_len for h in row):
            raise FramingError("check-value rows must be rectangular")
        parts.extend(row)
    return b"".join(parts)


def decode_check_rows(payload: bytes) -> list[list[bytes]]:
    reader = PayloadReader(payload, MessageType.CHECK_VALUES)
    count, width, check_len = reader.unpack("<IBB")
    rows = [[reader.take(check_len) for _ in range(width)] for _ in range(count)]
    reader.finish()
    return rows


def encode_bits(bits: list[int]) -> bytes:
    return struct.pack("<I", len(bits)) + bytes(1 if b else 0 for b in bits)


def decode_bits(payload: bytes) -> list[int]:
    reader = PayloadReader(payload, MessageType.MATCH_RESULT)
    (count,) = reader.unpack("<I")
    raw = reader.take(count)
    reader.finish()
    if any(b > 1 for b in raw):
        raise FramingError("MATCH_RESULT: bit values must be 0 or 1")
    return list(raw)


# -- sessions and transports ------------------------------------------------------


class SessionRegistry:
    """Remembers every session id ever opened; a reused id is a replay."""

    def __init__(self):
        self._seen: set[bytes] = set()

    def open(self, session_id: bytes) -> None:
        if session_id in self._seen:
            raise SessionError(f"session id {session_id.hex()} was already used")
        self._seen.add(session_id)


@dataclass
class Inbox:
    """Per-party receive-side checks: right session, each message type at most once."""

    session_id: bytes
    seen: set[MessageType] = field(default_factory=set)

    def admit(self, message: WireMessage) -> WireMessage:
        if message.session_id != self.session_id:
            raise SessionError("message belongs to another session", message.message_type.name)
        if message.message_type in self.seen:
            raise SessionError("message type replayed within the session", message.message_type.name)
        self.seen.add(message.message_type)
        return message


class Channel:
    """Bounded in-memory pipe that moves fully encoded frames between two threads."""

    def __init__(self, name: str, capacity: int = 4, timeout: float | None = 600.0):
        self.name = name
        self.timeout = timeout
        self._queue: queue.Queue[bytes] = queue.Queue(maxsize=capacity)

    def send(self, message: WireMessage) -> None:
        self._queue.put(message.to_bytes(), timeout=self.timeout)

    def close(self) -> None:
        """Wake a blocked receiver with an empty frame."""
        try:
            self._queue.put_nowait(b"")
        except queue.Full:
            pass

    def recv(self) -> WireMessage:
        try:
            frame = self._queue.get(timeout=self.timeout)
        except queue.Empty:
            raise SessionError(f"timed out waiting on channel {self.name}") from None
        if not frame:
            raise SessionError(f"channel {self.name} closed by the peer")
        message, end = WireMessage.from_bytes(frame)
        if end != len(frame):
            raise FramingError("frame carries trailing bytes")
        return message


class SocketTransport:
    """The same frames over a connected stream socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock

    def _recv_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = self.sock.recv(n - len(buf))
            if not chunk:
                raise FramingError("connection closed mid-frame")
            buf.extend(chunk)
        return bytes(buf)

    def send(self, message: WireMessage) -> None:
        self.sock.sendall(message.to_bytes())

    def recv(self) -> WireMessage:
        header = self._recv_exact(HEADER.size)
        session_id, message_type, length = WireMessage.parse_header(header)
        payload = self._recv_exact(length) if length else b""
        return WireMessage(session_id, message_type, payload)

    def close(self) -> None:
        self.sock.close()


class SocketChannel:
    """Drop-in for :class:`Channel` whose frames cross a connected socket pair."""

    def __init__(self, name: str, timeout: float | None = 600.0):
        self.name = name
        self.timeout = timeout
        writer, reader = socket.socketpair()
        writer.settimeout(timeout)
        reader.settimeout(timeout)
        self._writer = SocketTransport(writer)
        self._reader = SocketTransport(reader)

    def send(self, message: WireMessage) -> None:
        try:
            self._writer.send(message)
        except TimeoutError:
            raise SessionError(f"timed out sending on channel {self.name}") from None
        except OSError as e:
            raise SessionError(f"channel {self.name} closed by the peer") from e

    def close(self) -> None:
        """Half-close the write side; a blocked receiver sees end of stream."""
        try:
            self._writer.sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass

    def recv(self) -> WireMessage:
        try:
            head = self._reader.sock.recv(1, socket.MSG_PEEK)
        except TimeoutError:
            raise SessionError(f"timed out waiting on channel {self.name}") from None
        if not head:
            raise SessionError(f"channel {self.name} closed by the peer")
        return self._reader.recv()

    def release(self) -> None:
        self._writer.close()
        self._reader.close()


class Transcript:
    """Every frame of a session in canonical order (by message type, each appears once)."""

    def __init__(self, messages: list[WireMessage] | None = None):
        self.messages: list[WireMessage] = sorted(messages or [], key=lambda m: int(m.message_type))

    def record(self, message: WireMessage) -> None:
        self.messages.append(message)
        self.messages.sort(key=lambda m: int(m.message_type))

    def __len__(self) -> int:
        return len(self.messages)

    def types(self) -> list[MessageType]:
        return [m.message_type for m in self.messages]

    def sizes(self) -> dict[str, int]:
        return {m.message_type.name: len(m.payload) for m in self.messages}

    def get(self, message_type: MessageType) -> WireMessage | None:
        return next((m for m in self.messages if m.message_type == message_type), None)

    def to_bytes(self) -> bytes:
        return b"".join(m.to_bytes() for m in self.messages)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Transcript":
        messages = []
        offset = 0
        while offset < len(data):
            message, offset = WireMessage.from_bytes(data, offset)
            messages.append(message)
        return cls(messages)
