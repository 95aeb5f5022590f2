"""Batch scheduler: one engine call per cycle over every ready client.

Cycle shape: wait for readiness, snapshot the ready services into one
shared waveform tiled by clips (ascending client id), run the engine,
rebase each resulting segment back to its client's stream time and feed
it through that client's agreement state, then deliver the updates.
"""

import csv
import threading
import time
from dataclasses import dataclass, fields
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .engine import ASREngine, EngineRequest
from .service import ClientService
from .transport import TranscriptUpdate
from .types import (
    MAX_CLIP_SECONDS,
    SAMPLE_RATE,
    ClipDescriptor,
    EngineError,
    NotReadyError,
    Segment,
    WordToken,
)

SKIP_ONCE = "skip-once"
PAUSE = "pause"
EVICT = "evict"
UNREADY_ACTIONS = (SKIP_ONCE, PAUSE, EVICT)

# Engine adapters may place word bounds slightly outside their clip.
CLIP_SLACK = 0.2

CONSECUTIVE_FAILURE_LIMIT = 3


@dataclass
class ReadinessPolicy:
    """How long to wait for stragglers, and what to do about them."""

    wait_timeout: float = 1.0
    unready_action: str = SKIP_ONCE

    def __post_init__(self):
        if not (1.0 <= self.wait_timeout <= 2.0):
            raise ValueError("wait_timeout %.3f outside [1, 2]" % self.wait_timeout)
        if self.unready_action not in UNREADY_ACTIONS:
            raise ValueError("unready_action must be one of %s" % (UNREADY_ACTIONS,))


@dataclass
class CycleMetrics:
    cycle_idx: int
    n_clients: int
    wait_s: float
    assemble_s: float
    infer_s: float
    dispatch_s: float


@dataclass
class _Entry:
    service: ClientService
    sink: Optional[Callable[[TranscriptUpdate], None]]
    on_evict: Optional[Callable[[], None]]


class SharedAudioBuffer:
    """One cycle's assembled waveform plus its clip layout."""

    def __init__(self):
        self._parts: List[np.ndarray] = []
        self._clips: List[ClipDescriptor] = []
        self._offsets: List[float] = []
        self._hints: List[Optional[str]] = []
        self._cursor_samples = 0

    def add(self, client_id: str, samples: np.ndarray, offset: float, hint: Optional[str]) -> None:
        if len(samples) == 0:
            return
        start = self._cursor_samples / SAMPLE_RATE
        self._cursor_samples += len(samples)
        end = self._cursor_samples / SAMPLE_RATE
        self._parts.append(samples)
        self._clips.append(ClipDescriptor(client_id, start, end))
        self._offsets.append(offset)
        self._hints.append(hint)

    def __len__(self) -> int:
        return len(self._clips)

    def to_request(self) -> EngineRequest:
        waveform = np.concatenate(self._parts) if self._parts else np.zeros(0, dtype=np.int16)
        return EngineRequest(
            waveform=waveform,
            clips=tuple(self._clips),
            offsets=tuple(self._offsets),
            language_hints=tuple(self._hints),
        )


def rebase(segment: Segment, clip: ClipDescriptor, service_base: float) -> Segment:
    """Map clip-time words back to the client's stream time.

    Word bounds are clamped into the clip first; adapters are allowed a
    little slack and must never leak outside their own clip.
    """
    words = tuple(
        WordToken(
            service_base + (min(max(w.start, clip.start), clip.end) - clip.start),
            service_base + (min(max(w.end, clip.start), clip.end) - clip.start),
            w.text,
        )
        for w in segment.words
    )
    return Segment(words=words, language=segment.language, clip=clip)


class Scheduler:
    """Owns the cycle loop for one engine instance."""

    def __init__(
        self,
        engine: ASREngine,
        policy: Optional[ReadinessPolicy] = None,
        metrics_path: Optional[str] = None,
    ):
        self.engine = engine
        self.policy = policy or ReadinessPolicy()
        self.metrics: List[CycleMetrics] = []
        self.healthy = True
        self.cycle_idx = 0
        self._entries: Dict[str, _Entry] = {}
        self._cond = threading.Condition()
        self._failures = 0
        self._metrics_path = metrics_path
        self._metrics_file = None
        self._metrics_writer = None

    # -- registry ------------------------------------------------------------

    def register(
        self,
        service: ClientService,
        sink: Optional[Callable[[TranscriptUpdate], None]] = None,
        on_evict: Optional[Callable[[], None]] = None,
    ) -> None:
        with self._cond:
            if service.client_id in self._entries:
                raise ValueError("client id %r already registered" % service.client_id)
            self._entries[service.client_id] = _Entry(service, sink, on_evict)
            service.bind_ready_listener(self._wake)
            self._cond.notify_all()

    def unregister(self, client_id: str) -> None:
        with self._cond:
            self._entries.pop(client_id, None)
            self._cond.notify_all()

    def _wake(self) -> None:
        with self._cond:
            self._cond.notify_all()

    @property
    def n_registered(self) -> int:
        with self._cond:
            return len(self._entries)

    # -- cycle ---------------------------------------------------------------

    def collect_ready(self) -> Tuple[List[_Entry], float]:
        """Block until every active service is ready or the timeout runs
        out; returns the ready subset and the time spent blocked here.

        The wait is the full blocked duration of this call; cycles that
        end up dispatching nobody are visible as timeout-length waits
        with n_clients = 0 in the metrics.
        """
        start = time.monotonic()
        deadline = start + self.policy.wait_timeout
        with self._cond:
            while True:
                now = time.monotonic()
                active = [
                    e
                    for e in self._entries.values()
                    if not e.service.paused and not e.service.drained
                ]
                ready = [e for e in active if e.service.ready]
                if active and len(ready) == len(active):
                    break
                if now >= deadline:
                    break
                self._cond.wait(timeout=min(deadline - now, 0.05))
            wait_s = max(0.0, time.monotonic() - start)
            unready = [e for e in active if not e.service.ready]
        if ready and unready:
            self._apply_unready_action(unready)
        return sorted(ready, key=lambda e: e.service.client_id), wait_s

    def _apply_unready_action(self, unready: List[_Entry]) -> None:
        action = self.policy.unready_action
        if action == SKIP_ONCE:
            return
        for entry in unready:
            if action == PAUSE:
                entry.service.paused = True
            elif action == EVICT:
                self.unregister(entry.service.client_id)
                if entry.on_evict is not None:
                    entry.on_evict()

    def assemble(self, entries: List[_Entry]) -> Tuple[SharedAudioBuffer, List[_Entry]]:
        """Snapshot the ready services into one tiled waveform.

        Snapshots longer than MAX_CLIP_SECONDS keep only their newest
        audio; the clip's stream offset advances to match.
        """
        shared = SharedAudioBuffer()
        used: List[_Entry] = []
        for entry in entries:
            svc = entry.service
            try:
                samples, base = svc.snapshot()
            except NotReadyError:
                continue
            limit = int(MAX_CLIP_SECONDS * SAMPLE_RATE)
            if len(samples) > limit:
                cut = len(samples) - limit
                samples = samples[cut:]
                base = base + cut / SAMPLE_RATE
            shared.add(svc.client_id, samples, base, svc.language_hint)
            used.append(entry)
        return shared, used

    def run_cycle(self) -> int:
        """One full batch cycle. Returns the number of per-client results
        dispatched (0 for an idle cycle or an engine failure)."""
        ready, wait_s = self.collect_ready()
        if not ready:
            self._finish_cycle(0, wait_s, 0.0, 0.0, 0.0)
            return 0
        t_assemble = time.monotonic()
        shared, used = self.assemble(ready)
        assemble_s = time.monotonic() - t_assemble
        if not len(shared):
            self._finish_cycle(0, wait_s, assemble_s, 0.0, 0.0)
            return 0
        request = shared.to_request()

        t_infer = time.monotonic()
        try:
            segments = self.engine.transcribe(request)
            if len(segments) != len(request.clips):
                raise EngineError(
                    "engine returned %d segments for %d clips"
                    % (len(segments), len(request.clips))
                )
        except Exception:
            for entry in used:
                entry.service.restore_ready()
            self._failures += 1
            if self._failures >= CONSECUTIVE_FAILURE_LIMIT:
                self.healthy = False
            self._finish_cycle(0, wait_s, assemble_s, time.monotonic() - t_infer, 0.0)
            return 0
        infer_s = time.monotonic() - t_infer
        self._failures = 0

        t_dispatch = time.monotonic()
        dispatched = 0
        for segment, clip, offset, entry in zip(
            segments, request.clips, request.offsets, used
        ):
            stream_segment = rebase(segment, clip, offset)
            updates = entry.service.apply_result(stream_segment)
            if entry.sink is not None:
                for update in updates:
                    entry.sink(update)
            dispatched += 1
        dispatch_s = time.monotonic() - t_dispatch
        self._finish_cycle(len(used), wait_s, assemble_s, infer_s, dispatch_s)
        return dispatched

    def _finish_cycle(
        self, n_clients: int, wait_s: float, assemble_s: float, infer_s: float, dispatch_s: float
    ) -> None:
        self._record(
            CycleMetrics(
                cycle_idx=self.cycle_idx,
                n_clients=n_clients,
                wait_s=wait_s,
                assemble_s=assemble_s,
                infer_s=infer_s,
                dispatch_s=dispatch_s,
            )
        )
        self.cycle_idx += 1

    def loop(self, stop_event: threading.Event) -> None:
        while not stop_event.is_set() and self.healthy:
            self.run_cycle()
        self.close()

    # -- metrics -------------------------------------------------------------

    def _record(self, row: CycleMetrics) -> None:
        self.metrics.append(row)
        if self._metrics_path is None:
            return
        if self._metrics_writer is None:
            self._metrics_file = open(self._metrics_path, "w", newline="")
            self._metrics_writer = csv.writer(self._metrics_file)
            self._metrics_writer.writerow([f.name for f in fields(CycleMetrics)])
        self._metrics_writer.writerow(
            [
                row.cycle_idx,
                row.n_clients,
                "%.6f" % row.wait_s,
                "%.6f" % row.assemble_s,
                "%.6f" % row.infer_s,
                "%.6f" % row.dispatch_s,
            ]
        )
        self._metrics_file.flush()

    def close(self) -> None:
        if self._metrics_file is not None:
            self._metrics_file.close()
            self._metrics_file = None
            self._metrics_writer = None
