"""Load generator: N concurrent real-time clients against a streaming
server, recording every response into metrics CSVs.

Pacing is capture-complete: the chunk covering stream time
[k*D, (k+1)*D) is sent at wall time t0 + (k+1)*D, since audio cannot be
shipped before it exists. All clients share one t0 (a barrier releases
them together), so delay rows are comparable across clients.
"""

import argparse
import csv
import json
import math
import os
import queue
import socket
import threading
import time
import wave
from dataclasses import dataclass, field
from statistics import mean, median
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .engine import ASREngine, LatencyModel, MockEngine, MockScript, PerturbConfig
from .metrics import (
    KindSummary,
    MetricsRecord,
    hypothesis_vs_confirmed,
    response_similarity,
    response_wer,
    wer,
    write_records_csv,
)
from .scheduler import CycleMetrics, ReadinessPolicy
from .server import StreamServer
from .service import DEFAULT_MAX_BUFFER
from .transport import (
    FRAME_AUDIO,
    FRAME_CLOSE,
    FRAME_ERROR,
    FRAME_HELLO,
    FRAME_UPDATE,
    TranscriptUpdate,
    encode_audio,
    encode_frame,
    encode_hello,
    parse_error,
    parse_hello_reply,
    read_frame,
)
from .types import SAMPLE_RATE, WordToken, encode_pcm16le, validate_word_order

PACING_GRACE_CHUNKS = 1.0


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    """One streamable source: audio samples plus its reference words."""

    client_name: str
    samples: np.ndarray
    reference_words: Tuple[WordToken, ...]
    language: Optional[str] = None
    script_path: Optional[str] = None

    def __post_init__(self):
        validate_word_order(self.reference_words)

    @property
    def duration(self) -> float:
        return len(self.samples) / SAMPLE_RATE


def _read_wav(path: str) -> np.ndarray:
    with wave.open(path, "rb") as wf:
        if wf.getnchannels() != 1 or wf.getsampwidth() != 2 or wf.getframerate() != SAMPLE_RATE:
            raise ValueError(
                "%s: need mono 16-bit %d Hz, got %d ch / %d bytes / %d Hz"
                % (path, SAMPLE_RATE, wf.getnchannels(), wf.getsampwidth(), wf.getframerate())
            )
        return np.frombuffer(wf.readframes(wf.getnframes()), dtype="<i2").copy()


def _resolve_audio(spec, base_dir: str, reference: Tuple[WordToken, ...]):
    """Manifest `audio` field: file path, {"track","script"} or {"silence_s"}.

    Returns (samples, reference_words, script_path); track entries default
    their reference to the script words.
    """
    if isinstance(spec, str):
        path = spec if os.path.isabs(spec) else os.path.join(base_dir, spec)
        if path.endswith(".wav"):
            return _read_wav(path), reference, None
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) % 2:
            raise ValueError("%s: odd byte count for 16-bit PCM" % path)
        return np.frombuffer(raw, dtype="<i2").copy(), reference, None
    if isinstance(spec, dict) and "silence_s" in spec:
        n = int(round(float(spec["silence_s"]) * SAMPLE_RATE))
        return np.zeros(n, dtype=np.int16), reference, None
    if isinstance(spec, dict) and "track" in spec:
        script_path = spec["script"]
        if not os.path.isabs(script_path):
            script_path = os.path.join(base_dir, script_path)
        track = MockScript.load(script_path).tracks.get(spec["track"], ())
        if not track:
            raise ValueError("track %r not found in %s" % (spec["track"], script_path))
        n = int(math.ceil(track[-1].end * SAMPLE_RATE))
        return np.zeros(n, dtype=np.int16), reference or track, script_path
    raise ValueError("unsupported audio spec %r" % (spec,))


def load_manifest(path: str) -> List[ManifestEntry]:
    """UTF-8 JSON lines: {client_name, audio, reference_words?, language?}."""
    base_dir = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError("%s:%d: %s" % (path, lineno, exc)) from exc
            reference = tuple(
                WordToken(float(s), float(e), str(t))
                for s, e, t in obj.get("reference_words", [])
            )
            samples, reference, script_path = _resolve_audio(obj["audio"], base_dir, reference)
            entries.append(
                ManifestEntry(
                    client_name=obj["client_name"],
                    samples=samples,
                    reference_words=reference,
                    language=obj.get("language"),
                    script_path=script_path,
                )
            )
    if not entries:
        raise ValueError("%s: empty manifest" % path)
    return entries


def entries_from_script(script: MockScript, script_path: Optional[str] = None) -> List[ManifestEntry]:
    """One silence-backed entry per track; handy for mock-engine runs."""
    entries = []
    for name in sorted(script.tracks):
        track = script.tracks[name]
        n = int(math.ceil(track[-1].end * SAMPLE_RATE))
        entries.append(
            ManifestEntry(
                client_name=name,
                samples=np.zeros(n, dtype=np.int16),
                reference_words=track,
                script_path=script_path,
            )
        )
    return entries


# ---------------------------------------------------------------------------
# one client session
# ---------------------------------------------------------------------------


@dataclass
class ClientResult:
    client_id: str
    entry: ManifestEntry
    chunks_sent: int = 0
    hypotheses: int = 0
    confirmations: int = 0
    pacing_warnings: int = 0
    similarity_skipped: int = 0
    final_words: List[WordToken] = field(default_factory=list)
    error: Optional[str] = None

    @property
    def final_text(self) -> str:
        return " ".join(w.text for w in self.final_words)


class _LoadClient:
    def __init__(
        self,
        address: Tuple[str, int],
        entry: ManifestEntry,
        chunk_s: float,
        sink: "queue.Queue[MetricsRecord]",
        fast: bool,
    ):
        self.address = address
        self.entry = entry
        self.chunk_s = chunk_s
        self.sink = sink
        self.fast = fast
        self.result = ClientResult(client_id="", entry=entry)
        self._t0 = 0.0
        self._sock: Optional[socket.socket] = None
        self._done = threading.Event()

    def connect(self) -> None:
        try:
            self._sock = socket.create_connection(self.address, timeout=10.0)
        except OSError as exc:
            raise RuntimeError(
                "cannot reach server at %s:%d: %s" % (self.address[0], self.address[1], exc)
            ) from exc
        self._sock.settimeout(None)
        self._sock.sendall(
            encode_frame(
                FRAME_HELLO,
                encode_hello(self.entry.client_name, self.chunk_s, self.entry.language),
            )
        )
        frame = read_frame(self._sock)
        if frame is None or frame[0] != FRAME_HELLO:
            raise RuntimeError("handshake failed for %s" % self.entry.client_name)
        self.result.client_id = parse_hello_reply(frame[1])

    def _on_update(self, update: TranscriptUpdate, emit_wall: float) -> None:
        seg_end = update.words[-1].end
        sims = response_similarity(self.entry.reference_words, update)
        if sims is None:
            strict = light = rate = None
            self.result.similarity_skipped += 1
        else:
            strict, light = sims
            rate = response_wer(self.entry.reference_words, update)
        if update.kind == "confirmed":
            self.result.confirmations += 1
            self.result.final_words.extend(update.words)
        else:
            self.result.hypotheses += 1
        self.sink.put(
            MetricsRecord(
                client=self.result.client_id,
                response_kind=update.kind,
                emit_wall_time=emit_wall,
                segment_end_stream_time=seg_end,
                delay_s=emit_wall - (self._t0 + seg_end),
                wer=rate,
                strict_sim=strict,
                light_sim=light,
            )
        )

    def _reader(self) -> None:
        try:
            while True:
                frame = read_frame(self._sock)
                if frame is None:
                    break
                tag, payload = frame
                if tag == FRAME_UPDATE:
                    self._on_update(TranscriptUpdate.from_payload(payload), time.time())
                elif tag == FRAME_CLOSE:
                    break
                elif tag == FRAME_ERROR:
                    code, message = parse_error(payload)
                    self.result.error = "%s: %s" % (code, message)
        except OSError:
            self.result.error = self.result.error or "connection lost"
        finally:
            self._done.set()

    def run(self, t0: float) -> None:
        """Pace the stream out, close, then wait for the server to drain."""
        self._t0 = t0
        reader = threading.Thread(target=self._reader, name="load-reader", daemon=True)
        reader.start()
        samples = self.entry.samples
        chunk_n = int(round(self.chunk_s * SAMPLE_RATE))
        n_chunks = max(1, math.ceil(len(samples) / chunk_n))
        try:
            for k in range(n_chunks):
                piece = samples[k * chunk_n : (k + 1) * chunk_n]
                if len(piece) < chunk_n:
                    piece = np.concatenate([piece, np.zeros(chunk_n - len(piece), dtype=np.int16)])
                if not self.fast:
                    target = t0 + (k + 1) * self.chunk_s
                    now = time.time()
                    if now < target:
                        time.sleep(target - now)
                    elif now - target > PACING_GRACE_CHUNKS * self.chunk_s:
                        self.result.pacing_warnings += 1
                self._sock.sendall(encode_frame(FRAME_AUDIO, encode_audio(k, encode_pcm16le(piece))))
                self.result.chunks_sent += 1
            self._sock.sendall(encode_frame(FRAME_CLOSE))
        except OSError as exc:
            self.result.error = self.result.error or str(exc)
        deadline = n_chunks * self.chunk_s + 90.0
        if not self._done.wait(timeout=deadline):
            self.result.error = self.result.error or "timed out waiting for drain"
        try:
            self._sock.close()
        except OSError:
            pass


# ---------------------------------------------------------------------------
# run orchestration
# ---------------------------------------------------------------------------


@dataclass
class LoadResult:
    records: List[MetricsRecord]
    clients: List[ClientResult]
    kind_summary: Optional[KindSummary]
    cycle_metrics: List[CycleMetrics] = field(default_factory=list)
    responses_csv: Optional[str] = None
    summary_csv: Optional[str] = None

    def mean_confirmed_delay(self) -> Optional[float]:
        delays = [r.delay_s for r in self.records if r.response_kind == "confirmed"]
        return mean(delays) if delays else None


SUMMARY_FIELDS = [
    "client",
    "language",
    "chunks_sent",
    "hypotheses",
    "confirmations",
    "mean_delay_hypothesis_s",
    "mean_delay_confirmed_s",
    "median_delay_confirmed_s",
    "final_wer",
    "median_strict_sim",
    "median_light_sim",
    "similarity_skipped",
    "pacing_warnings",
    "error",
]


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else "%.6f" % x


def write_summary_csv(path: str, clients: Sequence[ClientResult], records: Sequence[MetricsRecord]) -> None:
    by_client: Dict[str, List[MetricsRecord]] = {}
    for r in records:
        by_client.setdefault(r.client, []).append(r)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_FIELDS)
        for c in clients:
            rows = by_client.get(c.client_id, [])
            hyp = [r.delay_s for r in rows if r.response_kind == "hypothesis"]
            conf = [r.delay_s for r in rows if r.response_kind == "confirmed"]
            strict = [r.strict_sim for r in rows if r.strict_sim is not None]
            light = [r.light_sim for r in rows if r.light_sim is not None]
            # Reference token text may span several words; normalize both
            # sides the same way (join, then whitespace-split).
            ref = " ".join(w.text for w in c.entry.reference_words).split()
            rate = wer(ref, c.final_text.split())[0] if ref else None
            writer.writerow(
                [
                    c.client_id,
                    c.entry.language or "",
                    c.chunks_sent,
                    c.hypotheses,
                    c.confirmations,
                    _fmt(mean(hyp) if hyp else None),
                    _fmt(mean(conf) if conf else None),
                    _fmt(median(conf) if conf else None),
                    _fmt(rate),
                    _fmt(median(strict) if strict else None),
                    _fmt(median(light) if light else None),
                    c.similarity_skipped,
                    c.pacing_warnings,
                    c.error or "",
                ]
            )


def _engine_from_entries(entries: Sequence[ManifestEntry], latency: LatencyModel, perturb: PerturbConfig) -> ASREngine:
    paths = {e.script_path for e in entries if e.script_path}
    if len(paths) != 1:
        raise ValueError(
            "in-process server needs exactly one mock script across the manifest "
            "(found %d); pass engine= explicitly instead" % len(paths)
        )
    return MockEngine(MockScript.load(paths.pop()), perturb=perturb, latency=latency)


def run_load(
    entries: Sequence[ManifestEntry],
    n_clients: int,
    chunk_duration: float,
    *,
    server: Optional[str] = None,
    engine: Optional[ASREngine] = None,
    latency: LatencyModel = LatencyModel(),
    perturb: PerturbConfig = PerturbConfig(),
    policy: Optional[ReadinessPolicy] = None,
    max_buffer: float = DEFAULT_MAX_BUFFER,
    out_dir: Optional[str] = None,
    fast: bool = False,
) -> LoadResult:
    """Stream n_clients sessions concurrently and collect metrics.

    Entries are reused round-robin when there are fewer than n_clients.
    Without `server`, an in-process server is started around `engine` (or
    a mock engine inferred from the manifest's script).
    """
    if not entries:
        raise ValueError("no manifest entries")
    if not 0.0 < chunk_duration <= 1.0:
        raise ValueError("chunk_duration must be in (0, 1] seconds")

    own_server: Optional[StreamServer] = None
    if server is None:
        if engine is None:
            engine = _engine_from_entries(entries, latency, perturb)
        own_server = StreamServer(engine, policy, max_buffer=max_buffer).start()
        address = ("127.0.0.1", own_server.port)
    else:
        host, _, port = server.rpartition(":")
        address = (host or "127.0.0.1", int(port))

    sink: "queue.Queue[MetricsRecord]" = queue.Queue()
    clients = [
        _LoadClient(address, entries[i % len(entries)], chunk_duration, sink, fast)
        for i in range(n_clients)
    ]
    try:
        try:
            for c in clients:
                c.connect()  # all handshakes land before anyone starts pacing
        except RuntimeError:
            for c in clients:
                if c._sock is not None:
                    c._sock.close()
            raise
        t0_box: List[float] = []
        barrier = threading.Barrier(n_clients, action=lambda: t0_box.append(time.time()))

        def _run(c: _LoadClient) -> None:
            barrier.wait()
            c.run(t0_box[0])

        threads = [threading.Thread(target=_run, args=(c,), daemon=True) for c in clients]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    finally:
        cycles: List[CycleMetrics] = []
        if own_server is not None:
            cycles = list(own_server.scheduler.metrics)
            own_server.stop()

    records: List[MetricsRecord] = []
    while True:
        try:
            records.append(sink.get_nowait())
        except queue.Empty:
            break
    records.sort(key=lambda r: r.emit_wall_time)

    try:
        kinds = hypothesis_vs_confirmed(records) if records else None
    except ValueError:
        kinds = None  # ordering violation is the caller's to assert on

    result = LoadResult(records, [c.result for c in clients], kinds, cycles)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        result.responses_csv = os.path.join(out_dir, "responses.csv")
        result.summary_csv = os.path.join(out_dir, "summary.csv")
        write_records_csv(result.responses_csv, records)
        write_summary_csv(result.summary_csv, result.clients, records)
    return result


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def _parse_pair(value: str) -> LatencyModel:
    a, b = value.split(",")
    return LatencyModel(float(a), float(b))


def _parse_perturb(value: str) -> PerturbConfig:
    p_punct, p_drop, seed = value.split(",")
    return PerturbConfig(p_punct=float(p_punct), p_drop=float(p_drop), seed=int(seed))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="scribepool-loadgen",
        description="Replay manifest audio as N concurrent real-time clients.",
    )
    parser.add_argument("--clients", type=int, required=True)
    parser.add_argument("--chunk", type=float, choices=[0.5, 1.0], required=True)
    parser.add_argument("--manifest", required=True, help="JSON-lines stream manifest")
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--engine-latency", type=_parse_pair, default=LatencyModel(), metavar="A,B")
    parser.add_argument("--perturb", type=_parse_perturb, default=PerturbConfig(), metavar="P_PUNCT,P_DROP,SEED")
    args = parser.parse_args(argv)

    entries = load_manifest(args.manifest)
    result = run_load(
        entries,
        args.clients,
        args.chunk,
        latency=args.engine_latency,
        perturb=args.perturb,
        out_dir=args.out_dir,
    )
    print("responses: %s" % result.responses_csv)
    print("summary:   %s" % result.summary_csv)
    d = result.mean_confirmed_delay()
    if d is not None:
        print("mean confirmed delay: %.3f s over %d clients" % (d, args.clients))
    failures = [c for c in result.clients if c.error]
    for c in failures:
        print("client %s: %s" % (c.client_id, c.error))
    return 1 if failures else 0


if __name__ == "__main__":
    import sys

    sys.exit(main())
