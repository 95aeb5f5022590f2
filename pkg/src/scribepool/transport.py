"""Wire framing for client sessions and the engine adapter.

Every frame is a 1-byte type tag, a 4-byte big-endian payload length, then
the payload. JSON payloads use a canonical encoding (sorted keys, compact
separators, UTF-8, integral numbers without a trailing ".0") so that any
conforming client, in any language, produces byte-identical frames.
"""

import json
import socket
import struct
from dataclasses import dataclass, field
from typing import Optional, Tuple

from .types import (
    MAX_CHUNK_SECONDS,
    InvalidSegmentError,
    StreamError,
    WordToken,
    join_words,
    validate_word_order,
)

FRAME_HELLO = 0x01
FRAME_AUDIO = 0x02
FRAME_UPDATE = 0x03
FRAME_ERROR = 0x04
FRAME_CLOSE = 0x05

_KNOWN_TAGS = (FRAME_HELLO, FRAME_AUDIO, FRAME_UPDATE, FRAME_ERROR, FRAME_CLOSE)

_HEADER = struct.Struct(">BI")
_SEQ = struct.Struct(">I")

MAX_PAYLOAD = 16 * 1024 * 1024  # 16 MiB


class ProtocolError(StreamError):
    """Violation of the wire protocol; maps to an Error frame."""

    def __init__(self, code: str, message: str):
        super().__init__("%s: %s" % (code, message))
        self.code = code
        self.message = message


# ---------------------------------------------------------------------------
# frame codec
# ---------------------------------------------------------------------------


def encode_frame(tag: int, payload: bytes = b"") -> bytes:
    if tag not in _KNOWN_TAGS:
        raise ProtocolError("bad-tag", "unknown frame tag 0x%02x" % tag)
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError("frame-too-large", "payload of %d bytes" % len(payload))
    return _HEADER.pack(tag, len(payload)) + payload


def decode_frame(data: bytes) -> Tuple[int, bytes]:
    """Decode one complete frame from a byte string (tests and adapters)."""
    if len(data) < _HEADER.size:
        raise ProtocolError("truncated", "frame header needs 5 bytes, got %d" % len(data))
    tag, length = _HEADER.unpack_from(data)
    if tag not in _KNOWN_TAGS:
        raise ProtocolError("bad-tag", "unknown frame tag 0x%02x" % tag)
    if length > MAX_PAYLOAD:
        raise ProtocolError("frame-too-large", "declared %d bytes" % length)
    if len(data) != _HEADER.size + length:
        raise ProtocolError(
            "truncated", "expected %d payload bytes, got %d" % (length, len(data) - _HEADER.size)
        )
    return tag, data[_HEADER.size :]


def read_frame(sock: socket.socket) -> Optional[Tuple[int, bytes]]:
    """Read one frame from a socket. Returns None on clean EOF."""
    header = _read_exact(sock, _HEADER.size)
    if header is None:
        return None
    tag, length = _HEADER.unpack(header)
    if tag not in _KNOWN_TAGS:
        raise ProtocolError("bad-tag", "unknown frame tag 0x%02x" % tag)
    if length > MAX_PAYLOAD:
        raise ProtocolError("frame-too-large", "declared %d bytes" % length)
    if length == 0:
        return tag, b""
    payload = _read_exact(sock, length)
    if payload is None:
        raise ProtocolError("truncated", "EOF inside frame payload")
    return tag, payload


def _read_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    chunks = []
    remaining = n
    while remaining:
        piece = sock.recv(remaining)
        if not piece:
            if remaining == n:
                return None  # clean EOF on a frame boundary
            raise ProtocolError(
                "truncated", "EOF mid-frame after %d bytes" % (n - remaining)
            )
        chunks.append(piece)
        remaining -= len(piece)
    return b"".join(chunks)


# ---------------------------------------------------------------------------
# canonical JSON
# ---------------------------------------------------------------------------


def _canonical(obj):
    if isinstance(obj, float):
        if obj != obj or obj in (float("inf"), float("-inf")):
            raise ValueError("non-finite number on the wire")
        return int(obj) if obj.is_integer() else obj
    if isinstance(obj, dict):
        return {k: _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    return obj


def canonical_json(obj) -> bytes:
    """Deterministic JSON bytes: sorted keys, no spaces, UTF-8, 1.0 -> 1."""
    return json.dumps(
        _canonical(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def _parse_json(payload: bytes) -> dict:
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError("bad-json", str(exc))
    if not isinstance(obj, dict):
        raise ProtocolError("bad-json", "expected a JSON object")
    return obj


# ---------------------------------------------------------------------------
# payload schemas
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TranscriptUpdate:
    """One server-to-client result: a confirmed run or the live hypothesis."""

    kind: str  # "hypothesis" | "confirmed"
    language: str
    words: tuple
    text: str = field(init=False, default="")

    def __post_init__(self):
        if self.kind not in ("hypothesis", "confirmed"):
            raise ValueError("bad update kind %r" % self.kind)
        validate_word_order(self.words)
        object.__setattr__(self, "text", join_words(self.words))

    def to_payload(self) -> bytes:
        return canonical_json(
            {
                "kind": self.kind,
                "language": self.language,
                "text": self.text,
                "words": [{"start": w.start, "end": w.end, "text": w.text} for w in self.words],
            }
        )

    @classmethod
    def from_payload(cls, payload: bytes) -> "TranscriptUpdate":
        obj = _parse_json(payload)
        try:
            words = tuple(
                WordToken(float(w["start"]), float(w["end"]), str(w["text"]))
                for w in obj["words"]
            )
            update = cls(kind=str(obj["kind"]), language=str(obj["language"]), words=words)
        except (KeyError, TypeError, ValueError, InvalidSegmentError) as exc:
            raise ProtocolError("bad-update", str(exc))
        if obj.get("text") != update.text:
            raise ProtocolError("bad-update", "text does not match joined words")
        return update


def encode_hello(client_name: str, chunk_duration_s: float, language_hint: Optional[str] = None) -> bytes:
    obj = {"client_name": client_name, "chunk_duration_s": chunk_duration_s}
    if language_hint is not None:
        obj["language_hint"] = language_hint
    return canonical_json(obj)


def parse_hello(payload: bytes) -> dict:
    obj = _parse_json(payload)
    name = obj.get("client_name")
    if not isinstance(name, str) or not name:
        raise ProtocolError("bad-hello", "client_name must be a non-empty string")
    dur = obj.get("chunk_duration_s")
    if not isinstance(dur, (int, float)) or isinstance(dur, bool):
        raise ProtocolError("bad-hello", "chunk_duration_s must be a number")
    dur = float(dur)
    if dur <= 0.0 or dur > MAX_CHUNK_SECONDS:
        raise ProtocolError("bad-hello", "chunk_duration_s %.6f outside (0, 1]" % dur)
    hint = obj.get("language_hint")
    if hint is not None and not isinstance(hint, str):
        raise ProtocolError("bad-hello", "language_hint must be a string")
    return {"client_name": name, "chunk_duration_s": dur, "language_hint": hint}


def encode_hello_reply(client_id: str) -> bytes:
    return canonical_json({"client_id": client_id})


def parse_hello_reply(payload: bytes) -> str:
    obj = _parse_json(payload)
    client_id = obj.get("client_id")
    if not isinstance(client_id, str) or not client_id:
        raise ProtocolError("bad-hello", "client_id must be a non-empty string")
    return client_id


def encode_audio(seq: int, pcm: bytes) -> bytes:
    return _SEQ.pack(seq) + pcm


def parse_audio(payload: bytes) -> Tuple[int, bytes]:
    if len(payload) < _SEQ.size:
        raise ProtocolError("bad-audio", "audio payload shorter than its seq header")
    (seq,) = _SEQ.unpack_from(payload)
    return seq, payload[_SEQ.size :]


def encode_error(code: str, message: str) -> bytes:
    return canonical_json({"code": code, "message": message})


def parse_error(payload: bytes) -> Tuple[str, str]:
    obj = _parse_json(payload)
    return str(obj.get("code", "unknown")), str(obj.get("message", ""))
