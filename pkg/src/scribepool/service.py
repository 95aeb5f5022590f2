"""Per-client session state: audio accumulation, trimming, agreement.

A service owns one client's audio buffer plus its hypothesis buffer. The
session thread appends audio; the scheduler thread snapshots and applies
engine results. An RLock serializes the two sides; no other coordination
is needed because a service never talks to another service.
"""

import threading
from typing import Callable, List, Optional

import numpy as np

from .hypothesis import HypothesisBuffer
from .transport import TranscriptUpdate
from .types import (
    SAMPLE_RATE,
    TIME_EPS,
    AudioChunk,
    NotReadyError,
    Segment,
    StreamDesyncError,
)

MIN_MAX_BUFFER = 10.0
MAX_MAX_BUFFER = 15.0
DEFAULT_MAX_BUFFER = 15.0

# Drain passes tolerated without any new confirmation before giving up on
# an unstable tail.
DRAIN_STALL_LIMIT = 3


class ClientService:
    """State and operations for one streaming client."""

    def __init__(
        self,
        client_id: str,
        max_buffer: float = DEFAULT_MAX_BUFFER,
        language_hint: Optional[str] = None,
    ):
        if not (MIN_MAX_BUFFER <= max_buffer <= MAX_MAX_BUFFER):
            raise ValueError(
                "max_buffer %.2f outside [%.0f, %.0f]" % (max_buffer, MIN_MAX_BUFFER, MAX_MAX_BUFFER)
            )
        self.client_id = client_id
        self.max_buffer = float(max_buffer)
        self.language_hint = language_hint
        self.hypothesis = HypothesisBuffer()
        self.base_offset = 0.0
        self.ready = False
        self.paused = False
        self.draining = False
        self.drained = False
        self.drained_event = threading.Event()
        # Full confirmed history, append-only. hypothesis.confirmed is
        # bookkeeping and gets pruned by trims; this one never shrinks.
        self.transcript: List = []
        self._samples = np.zeros(0, dtype=np.int16)
        self._expected_seq = 0
        self._drain_stalls = 0
        self._on_ready: Optional[Callable[[], None]] = None
        self._lock = threading.RLock()

    # -- wiring ------------------------------------------------------------

    def bind_ready_listener(self, callback: Callable[[], None]) -> None:
        """Scheduler hook, fired whenever this service becomes ready."""
        self._on_ready = callback

    def _mark_ready(self) -> None:
        self.ready = True
        self.paused = False
        if self._on_ready is not None:
            self._on_ready()

    # -- audio intake -------------------------------------------------------

    def append_audio(self, chunk: AudioChunk) -> None:
        with self._lock:
            if chunk.client_id != self.client_id:
                raise StreamDesyncError(
                    "chunk for %r fed to service %r" % (chunk.client_id, self.client_id)
                )
            if chunk.seq != self._expected_seq:
                raise StreamDesyncError(
                    "client %s: expected seq %d, got %d"
                    % (self.client_id, self._expected_seq, chunk.seq)
                )
            self._expected_seq += 1
            self._samples = np.concatenate([self._samples, chunk.samples])
            self._mark_ready()

    @property
    def duration(self) -> float:
        """Seconds of audio currently buffered."""
        return len(self._samples) / SAMPLE_RATE

    @property
    def stream_end(self) -> float:
        """Stream time just past the newest buffered sample."""
        return self.base_offset + self.duration

    # -- scheduler side -----------------------------------------------------

    def snapshot(self):
        """Stable copy of the buffer for one batch cycle.

        Consumes the ready flag; restore_ready() undoes that if the cycle
        fails before dispatch.
        """
        with self._lock:
            if not self.ready:
                raise NotReadyError("client %s has no unprocessed audio" % self.client_id)
            self.ready = False
            return self._samples.copy(), self.base_offset

    def restore_ready(self) -> None:
        with self._lock:
            if not self.drained:
                self._mark_ready()

    def maybe_trim(self) -> Optional[float]:
        """Drop audio up to the newest confirmed word end below the buffer
        midpoint, once the buffer exceeds max_buffer. Returns the trim
        point, or None when no safe point exists."""
        with self._lock:
            dur = self.duration
            if dur <= self.max_buffer:
                return None
            midpoint = self.base_offset + dur / 2.0
            cut = None
            for w in self.hypothesis.confirmed:
                if w.end < midpoint - TIME_EPS and w.end > self.base_offset + TIME_EPS:
                    if cut is None or w.end > cut:
                        cut = w.end
            if cut is None:
                return None
            drop = int(round((cut - self.base_offset) * SAMPLE_RATE))
            drop = max(0, min(drop, len(self._samples)))
            self._samples = self._samples[drop:]
            # Sub-sample rounding (<= 31 us) is absorbed by TIME_EPS users.
            self.base_offset = cut
            self.hypothesis.drop_before(cut)
            return cut

    def apply_result(self, seg: Segment) -> List[TranscriptUpdate]:
        """Feed one rebased engine segment through agreement.

        Emits at most one confirmed update (the newly agreed run) and one
        hypothesis update (the remaining unconfirmed tail), then trims.
        """
        with self._lock:
            hb = self.hypothesis
            words = [w for w in seg.words if w.start >= hb.last_confirmed_end - TIME_EPS]
            hb.insert_segment(words)
            newly = hb.confirm()
            if not newly:
                newly = hb.fallback_confirm()
            updates = []
            if newly:
                self.transcript.extend(newly)
                updates.append(
                    TranscriptUpdate(kind="confirmed", language=seg.language, words=tuple(newly))
                )
            tail = hb.previous
            if tail:
                updates.append(
                    TranscriptUpdate(kind="hypothesis", language=seg.language, words=tuple(tail))
                )
            self.maybe_trim()
            if self.draining and not self.drained:
                if newly:
                    self._drain_stalls = 0
                else:
                    self._drain_stalls += 1
                if not tail or self._drain_stalls >= DRAIN_STALL_LIMIT:
                    self._finish_drain()
                else:
                    self._mark_ready()
            return updates

    # -- stream end ---------------------------------------------------------

    def finish_stream(self) -> None:
        """No more audio will arrive; reprocess until the tail settles."""
        with self._lock:
            if self.drained:
                return
            self.draining = True
            self._drain_stalls = 0
            if len(self._samples) == 0 and not self.hypothesis.unconfirmed_tail:
                self._finish_drain()
            else:
                self._mark_ready()

    def _finish_drain(self) -> None:
        self.drained = True
        self.draining = False
        self.ready = False
        self.drained_event.set()

    # -- introspection -------------------------------------------------------

    @property
    def confirmed_text(self) -> str:
        with self._lock:
            return " ".join(w.text for w in self.transcript)

    def confirmed_words(self):
        with self._lock:
            return list(self.transcript)
