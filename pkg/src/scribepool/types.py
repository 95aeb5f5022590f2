"""Core value types shared across the pipeline.

All audio is PCM signed 16-bit little-endian, mono, 16 kHz. Timestamps are
float seconds. "Stream time" counts from the first sample a client ever
sent; "clip time" is relative to one batched engine request. Time
comparisons use TIME_EPS to absorb float noise.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

SAMPLE_RATE = 16000
TIME_EPS = 1e-6
MAX_CHUNK_SECONDS = 1.0

# Engine inputs longer than this get their oldest audio cut off at assembly.
MAX_CLIP_SECONDS = 30.0


class StreamError(Exception):
    """Base class for pipeline errors that map to protocol error frames."""


class MalformedChunkError(StreamError):
    """Audio bytes that cannot be decoded as PCM16LE mono."""


class ChunkSizeError(StreamError):
    """Chunk duration outside (0, MAX_CHUNK_SECONDS]."""


class InvalidSegmentError(StreamError):
    """Word tokens that are unsorted or overlapping."""


class TrimBeyondConfirmedError(StreamError):
    """Attempt to drop audio past the confirmed frontier."""


class StreamDesyncError(StreamError):
    """Chunk sequence gap or client id mismatch."""


class NotReadyError(StreamError):
    """Snapshot requested while no unprocessed audio exists."""


class EngineError(StreamError):
    """Engine call failed or returned a malformed batch."""


def decode_pcm16le(data: bytes) -> np.ndarray:
    """Decode raw little-endian 16-bit PCM bytes into an int16 array."""
    if len(data) % 2 != 0:
        raise MalformedChunkError("PCM16 payload has odd byte count: %d" % len(data))
    return np.frombuffer(data, dtype="<i2")


def encode_pcm16le(samples: np.ndarray) -> bytes:
    """Inverse of decode_pcm16le. No silent casting: samples must be int16."""
    arr = np.asarray(samples)
    if arr.dtype != np.int16:
        raise MalformedChunkError("expected int16 samples, got %s" % arr.dtype)
    return arr.astype("<i2", copy=False).tobytes()


def duration_of(n_samples: int) -> float:
    return n_samples / SAMPLE_RATE


@dataclass(frozen=True, eq=False)
class AudioChunk:
    """One client-submitted slice of audio.

    Chunks from one client carry consecutive seq numbers starting at 0;
    the service layer rejects gaps. arrival_time is wall-clock receipt
    time, for metrics only.
    """

    client_id: str
    seq: int
    samples: np.ndarray
    arrival_time: float = 0.0

    def __post_init__(self):
        if self.samples.ndim != 1:
            raise MalformedChunkError("audio must be mono (1-D), got %d-D" % self.samples.ndim)
        if self.samples.dtype != np.int16:
            raise MalformedChunkError("audio must be int16, got %s" % self.samples.dtype)
        if self.seq < 0:
            raise StreamDesyncError("negative seq %d" % self.seq)
        dur = duration_of(len(self.samples))
        if dur <= 0.0 or dur > MAX_CHUNK_SECONDS:
            raise ChunkSizeError(
                "chunk duration %.6fs outside (0, %.1f]" % (dur, MAX_CHUNK_SECONDS)
            )

    @property
    def duration(self) -> float:
        return duration_of(len(self.samples))


def chunk_duration(chunk: AudioChunk) -> float:
    """Duration of a chunk in seconds (sample count / 16000)."""
    return chunk.duration


@dataclass(frozen=True)
class WordToken:
    """One transcribed word with timestamps in the enclosing timebase."""

    start: float
    end: float
    text: str

    def __post_init__(self):
        if self.end < self.start - TIME_EPS:
            raise InvalidSegmentError(
                "word %r ends (%.6f) before it starts (%.6f)" % (self.text, self.end, self.start)
            )


def validate_word_order(words: Sequence[WordToken]) -> None:
    """Words must be sorted by start and non-overlapping (within TIME_EPS)."""
    for prev, cur in zip(words, words[1:]):
        if cur.start < prev.start - TIME_EPS:
            raise InvalidSegmentError(
                "words out of order: %r@%.3f after %r@%.3f"
                % (cur.text, cur.start, prev.text, prev.start)
            )
        if cur.start < prev.end - TIME_EPS:
            raise InvalidSegmentError(
                "words overlap: %r ends %.3f, %r starts %.3f"
                % (prev.text, prev.end, cur.text, cur.start)
            )


def join_words(words: Sequence[WordToken]) -> str:
    return " ".join(w.text for w in words)


@dataclass(frozen=True)
class ClipDescriptor:
    """Position of one client's audio inside a shared engine waveform."""

    client_id: str
    start: float
    end: float

    def __post_init__(self):
        if self.start < 0.0 or self.end <= self.start:
            raise ValueError("bad clip bounds [%.6f, %.6f]" % (self.start, self.end))

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class Segment:
    """One engine result for one clip. text is always the joined word texts."""

    words: tuple
    language: str = "unknown"
    clip: Optional[ClipDescriptor] = None
    text: str = field(init=False, default="")

    def __post_init__(self):
        validate_word_order(self.words)
        object.__setattr__(self, "text", join_words(self.words))
