"""Transcription engines: the deterministic scripted mock and a socket
adapter for external engine processes.

Engines receive one shared waveform tiled by clips and must return exactly
one segment per clip, in clip order, with word timestamps in clip time.
"""

import hashlib
import json
import socket
import struct
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .transport import FRAME_AUDIO, FRAME_ERROR, FRAME_UPDATE, encode_frame, read_frame
from .types import (
    SAMPLE_RATE,
    TIME_EPS,
    ClipDescriptor,
    EngineError,
    Segment,
    WordToken,
)

# Words this close to the window end are fair game for the mock's
# simulated instability.
UNSTABLE_TAIL_SECONDS = 1.0


@dataclass(frozen=True)
class EngineRequest:
    """One batched inference call.

    offsets[i] is the stream time of clips[i]'s first sample; rebasing the
    results needs it and the mock uses it to locate its script window.
    """

    waveform: np.ndarray
    clips: Tuple[ClipDescriptor, ...]
    offsets: Tuple[float, ...]
    language_hints: Tuple[Optional[str], ...]

    def __post_init__(self):
        if not (len(self.clips) == len(self.offsets) == len(self.language_hints)):
            raise EngineError("clips, offsets and hints must align")
        # Clips must tile the waveform exactly: contiguous, from 0 to the end.
        total = len(self.waveform) / SAMPLE_RATE
        edge = 0.0
        for clip in self.clips:
            if abs(clip.start - edge) > TIME_EPS:
                raise EngineError(
                    "clip gap: expected start %f, got %f" % (edge, clip.start)
                )
            edge = clip.end
        if self.clips and abs(edge - total) > TIME_EPS:
            raise EngineError(
                "clips end at %f but waveform ends at %f" % (edge, total)
            )

    @property
    def batch_duration(self) -> float:
        return len(self.waveform) / SAMPLE_RATE


class ASREngine(ABC):
    @abstractmethod
    def transcribe(self, request: EngineRequest) -> List[Segment]:
        """One Segment per clip, clip order, clip-time words."""


# ---------------------------------------------------------------------------
# scripted mock
# ---------------------------------------------------------------------------


@dataclass
class PerturbConfig:
    """Controlled output instability. Decisions are pure functions of
    (seed, client, word index), never of batch composition."""

    p_punct: float = 0.0
    p_drop: float = 0.0
    seed: int = 0


@dataclass
class LatencyModel:
    """Cycle cost in seconds: fixed part plus per-batch-second part."""

    a: float = 0.0
    b: float = 0.0

    def seconds(self, batch_duration: float) -> float:
        return self.a + self.b * batch_duration


@dataclass
class MockScript:
    """Ground-truth word tracks keyed by client id, in stream time."""

    tracks: Dict[str, Tuple[WordToken, ...]] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str) -> "MockScript":
        tracks: Dict[str, List[WordToken]] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 4:
                    raise ValueError("%s:%d: expected 4 tab-separated fields" % (path, lineno))
                client_id, start, end, text = parts
                tracks.setdefault(client_id, []).append(
                    WordToken(float(start), float(end), text)
                )
        return cls({cid: tuple(words) for cid, words in tracks.items()})

    def dump(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for cid in sorted(self.tracks):
                for w in self.tracks[cid]:
                    fh.write("%s\t%s\t%s\t%s\n" % (cid, repr(w.start), repr(w.end), w.text))

    def resolve(self, client_id: str) -> Tuple[WordToken, ...]:
        """Track for a client id; "alice-2" falls back to track "alice".

        The server de-duplicates client names with a numeric suffix, and a
        load generator may point many clients at one track.
        """
        track = self.tracks.get(client_id)
        if track is not None:
            return track
        base, sep, suffix = client_id.rpartition("-")
        if sep and suffix.isdigit():
            return self.tracks.get(base, ())
        return ()

    def text_of(self, client_id: str) -> str:
        return " ".join(w.text for w in self.resolve(client_id))


def _chance(seed: int, client_id: str, index: int, kind: str) -> float:
    """Deterministic uniform draw in [0, 1)."""
    digest = hashlib.blake2s(
        ("%d|%s|%d|%s" % (seed, client_id, index, kind)).encode("utf-8")
    ).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


def mock_emit(
    track: Tuple[WordToken, ...],
    client_id: str,
    window_start: float,
    window_end: float,
    perturb: PerturbConfig,
) -> List[WordToken]:
    """Script words fully inside the window, in stream time, perturbed."""
    out = []
    for index, w in enumerate(track):
        if w.start < window_start - TIME_EPS or w.end > window_end + TIME_EPS:
            continue
        if perturb.p_drop > 0.0 and w.end > window_end - UNSTABLE_TAIL_SECONDS:
            if _chance(perturb.seed, client_id, index, "drop") < perturb.p_drop:
                continue
        text = w.text
        if perturb.p_punct > 0.0:
            if _chance(perturb.seed, client_id, index, "punct") < perturb.p_punct:
                text = text[:-1] if text.endswith(".") else text + "."
        out.append(WordToken(w.start, w.end, text))
    return out


class MockEngine(ASREngine):
    """Deterministic engine: looks words up in a script instead of
    listening to the audio. Byte-identical output for identical
    (script, seed, request) regardless of what else is in the batch."""

    def __init__(
        self,
        script: MockScript,
        perturb: Optional[PerturbConfig] = None,
        latency: Optional[LatencyModel] = None,
    ):
        self.script = script
        self.perturb = perturb or PerturbConfig()
        self.latency = latency or LatencyModel()

    def transcribe(self, request: EngineRequest) -> List[Segment]:
        delay = self.latency.seconds(request.batch_duration)
        if delay > 0:
            time.sleep(delay)
        segments = []
        for clip, offset, hint in zip(request.clips, request.offsets, request.language_hints):
            window_start = offset
            window_end = offset + clip.duration
            track = self.script.resolve(clip.client_id)
            stream_words = mock_emit(track, clip.client_id, window_start, window_end, self.perturb)
            clip_words = tuple(
                WordToken(clip.start + (w.start - window_start), clip.start + (w.end - window_start), w.text)
                for w in stream_words
            )
            segments.append(Segment(words=clip_words, language=hint or "unknown", clip=clip))
        return segments


# ---------------------------------------------------------------------------
# external engine adapter
# ---------------------------------------------------------------------------
#
# Request frame (FRAME_AUDIO): 4-byte BE metadata length, metadata JSON
# {"clips": [{client_id, start, end, offset, language_hint}]}, then the
# raw PCM16LE waveform. Reply frame (FRAME_UPDATE): JSON {"segments":
# [{"language", "words": [{start, end, text}]}]} aligned with the clips.
# FRAME_ERROR carries {"code", "message"}.

_META_LEN = struct.Struct(">I")


def encode_engine_request(request: EngineRequest) -> bytes:
    meta = json.dumps(
        {
            "clips": [
                {
                    "client_id": clip.client_id,
                    "start": clip.start,
                    "end": clip.end,
                    "offset": offset,
                    "language_hint": hint,
                }
                for clip, offset, hint in zip(request.clips, request.offsets, request.language_hints)
            ]
        }
    ).encode("utf-8")
    pcm = np.asarray(request.waveform, dtype="<i2").tobytes()
    return encode_frame(FRAME_AUDIO, _META_LEN.pack(len(meta)) + meta + pcm)


def decode_engine_request(payload: bytes) -> EngineRequest:
    if len(payload) < _META_LEN.size:
        raise EngineError("engine request too short")
    (meta_len,) = _META_LEN.unpack_from(payload)
    meta_end = _META_LEN.size + meta_len
    if meta_end > len(payload):
        raise EngineError("engine request metadata truncated")
    meta = json.loads(payload[_META_LEN.size : meta_end].decode("utf-8"))
    waveform = np.frombuffer(payload[meta_end:], dtype="<i2")
    clips, offsets, hints = [], [], []
    for c in meta["clips"]:
        clips.append(ClipDescriptor(c["client_id"], float(c["start"]), float(c["end"])))
        offsets.append(float(c["offset"]))
        hints.append(c.get("language_hint"))
    return EngineRequest(waveform, tuple(clips), tuple(offsets), tuple(hints))


def encode_engine_reply(segments: List[Segment]) -> bytes:
    return encode_frame(
        FRAME_UPDATE,
        json.dumps(
            {
                "segments": [
                    {
                        "language": seg.language,
                        "words": [
                            {"start": w.start, "end": w.end, "text": w.text} for w in seg.words
                        ],
                    }
                    for seg in segments
                ]
            }
        ).encode("utf-8"),
    )


def decode_engine_reply(payload: bytes, request: EngineRequest) -> List[Segment]:
    obj = json.loads(payload.decode("utf-8"))
    raw = obj.get("segments")
    if not isinstance(raw, list) or len(raw) != len(request.clips):
        raise EngineError(
            "engine returned %s segments for %d clips"
            % ("?" if not isinstance(raw, list) else len(raw), len(request.clips))
        )
    segments = []
    for entry, clip in zip(raw, request.clips):
        words = tuple(
            WordToken(float(w["start"]), float(w["end"]), str(w["text"]))
            for w in entry.get("words", [])
        )
        segments.append(Segment(words=words, language=str(entry.get("language", "unknown")), clip=clip))
    return segments


class ExternalEngine(ASREngine):
    """Engine living in another process, reached over a local socket.

    address is "host:port" or a filesystem path (AF_UNIX). The connection
    is created lazily and kept; any transport hiccup surfaces as
    EngineError so the scheduler's failure accounting sees it.
    """

    def __init__(self, address: str, connect_timeout: float = 5.0):
        self.address = address
        self.connect_timeout = connect_timeout
        self._sock: Optional[socket.socket] = None
        self._lock = threading.Lock()

    def _connect(self) -> socket.socket:
        if self.address.startswith("/"):
            sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            target = self.address
        else:
            host, _, port = self.address.rpartition(":")
            sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            target = (host or "127.0.0.1", int(port))
        sock.settimeout(self.connect_timeout)
        sock.connect(target)
        sock.settimeout(None)
        return sock

    def _drop_connection(self) -> None:
        # Caller must hold _lock (which is not re-entrant).
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def close(self) -> None:
        with self._lock:
            self._drop_connection()

    def transcribe(self, request: EngineRequest) -> List[Segment]:
        with self._lock:
            try:
                if self._sock is None:
                    self._sock = self._connect()
                self._sock.sendall(encode_engine_request(request))
                frame = read_frame(self._sock)
            except OSError as exc:
                self._drop_connection()
                raise EngineError("engine transport failed: %s" % exc)
            if frame is None:
                self._drop_connection()
                raise EngineError("engine closed the connection")
            tag, payload = frame
            if tag == FRAME_ERROR:
                raise EngineError("engine error: %s" % payload.decode("utf-8", "replace"))
            if tag != FRAME_UPDATE:
                self._drop_connection()
                raise EngineError("unexpected engine frame 0x%02x" % tag)
            return decode_engine_reply(payload, request)


def serve_engine(engine: ASREngine, listener: socket.socket, stop_event: threading.Event) -> None:
    """Host any engine behind the adapter protocol (tests and external
    engine processes). Handles one connection at a time."""
    listener.settimeout(0.2)
    while not stop_event.is_set():
        try:
            conn, _ = listener.accept()
        except socket.timeout:
            continue
        except OSError:
            return
        with conn:
            conn.settimeout(None)
            while not stop_event.is_set():
                try:
                    frame = read_frame(conn)
                except OSError:
                    break
                if frame is None:
                    break
                tag, payload = frame
                if tag != FRAME_AUDIO:
                    conn.sendall(encode_frame(FRAME_ERROR, b'{"code":"bad-frame"}'))
                    continue
                try:
                    request = decode_engine_request(payload)
                    segments = engine.transcribe(request)
                except Exception as exc:
                    conn.sendall(
                        encode_frame(
                            FRAME_ERROR,
                            json.dumps({"code": "engine-error", "message": str(exc)}).encode(),
                        )
                    )
                    continue
                conn.sendall(encode_engine_reply(segments))
