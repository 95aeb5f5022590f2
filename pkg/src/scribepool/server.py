"""TCP streaming server: one session thread per client, one scheduler
loop per engine.

Session lifecycle: Hello handshake, Audio frames with consecutive seqs,
client Close, server drains the remaining buffer, flushes the last
updates, answers with Close. Protocol violations get an Error frame and,
for unrecoverable ones, a Close.
"""

import argparse
import socket
import sys
import threading
import time
from typing import Dict, Optional

from .engine import (
    ASREngine,
    ExternalEngine,
    LatencyModel,
    MockEngine,
    MockScript,
    PerturbConfig,
)
from .scheduler import ReadinessPolicy, Scheduler
from .service import DEFAULT_MAX_BUFFER, ClientService
from .transport import (
    FRAME_AUDIO,
    FRAME_CLOSE,
    FRAME_ERROR,
    FRAME_HELLO,
    FRAME_UPDATE,
    ProtocolError,
    TranscriptUpdate,
    encode_error,
    encode_frame,
    encode_hello_reply,
    parse_audio,
    parse_hello,
    read_frame,
)
from .types import (
    SAMPLE_RATE,
    AudioChunk,
    StreamError,
    decode_pcm16le,
)

DRAIN_WAIT_SECONDS = 30.0


class _Session:
    def __init__(self, server: "StreamServer", conn: socket.socket):
        self.server = server
        self.conn = conn
        self.service: Optional[ClientService] = None
        self._send_lock = threading.Lock()
        self._closed = False

    # -- outbound ------------------------------------------------------------

    def _send(self, frame: bytes) -> None:
        with self._send_lock:
            if self._closed:
                return
            try:
                self.conn.sendall(frame)
            except OSError:
                self._closed = True

    def send_update(self, update: TranscriptUpdate) -> None:
        if not update.words:
            return  # empty updates carry no information
        self._send(encode_frame(FRAME_UPDATE, update.to_payload()))

    def _send_error(self, code: str, message: str) -> None:
        self._send(encode_frame(FRAME_ERROR, encode_error(code, message)))

    def _send_close(self) -> None:
        self._send(encode_frame(FRAME_CLOSE))

    # -- inbound -------------------------------------------------------------

    def run(self) -> None:
        try:
            self._run()
        except ProtocolError as exc:
            self._send_error(exc.code, exc.message)
            self._send_close()
        except OSError:
            pass
        finally:
            if self.service is not None:
                self.server.scheduler.unregister(self.service.client_id)
                self.server.release_client_id(self.service.client_id)
            self._closed = True
            try:
                self.conn.close()
            except OSError:
                pass

    def _run(self) -> None:
        frame = read_frame(self.conn)
        if frame is None:
            return
        tag, payload = frame
        if tag != FRAME_HELLO:
            raise ProtocolError("bad-handshake", "first frame must be Hello")
        hello = parse_hello(payload)
        chunk_s = hello["chunk_duration_s"]
        expected_samples = int(round(chunk_s * SAMPLE_RATE))

        client_id = self.server.claim_client_id(hello["client_name"])
        service = ClientService(
            client_id,
            max_buffer=self.server.max_buffer,
            language_hint=hello["language_hint"],
        )
        self.service = service
        self.server.scheduler.register(service, sink=self.send_update, on_evict=self._evicted)
        self._send(encode_frame(FRAME_HELLO, encode_hello_reply(client_id)))

        while True:
            frame = read_frame(self.conn)
            if frame is None:
                return  # client vanished; drop silently
            tag, payload = frame
            if tag == FRAME_AUDIO:
                seq, pcm = parse_audio(payload)
                samples = decode_pcm16le(pcm)
                if abs(len(samples) - expected_samples) > 1:
                    self._send_error(
                        "bad-chunk-size",
                        "declared %.3fs chunks (%d samples), got %d"
                        % (chunk_s, expected_samples, len(samples)),
                    )
                    continue
                try:
                    service.append_audio(
                        AudioChunk(
                            client_id=client_id,
                            seq=seq,
                            samples=samples,
                            arrival_time=time.time(),
                        )
                    )
                except StreamError as exc:
                    self._send_error("stream-desync", str(exc))
                    self._send_close()
                    return
            elif tag == FRAME_CLOSE:
                service.finish_stream()
                service.drained_event.wait(timeout=DRAIN_WAIT_SECONDS)
                self._send_close()
                return
            elif tag == FRAME_ERROR:
                return
            else:
                raise ProtocolError("bad-frame", "unexpected frame 0x%02x" % tag)

    def _evicted(self) -> None:
        self._send_error("evicted", "service was not ready in time")
        self._send_close()


class StreamServer:
    """Accept loop plus scheduler thread around a shared engine."""

    def __init__(
        self,
        engine: ASREngine,
        policy: Optional[ReadinessPolicy] = None,
        max_buffer: float = DEFAULT_MAX_BUFFER,
        host: str = "127.0.0.1",
        port: int = 0,
        metrics_path: Optional[str] = None,
    ):
        self.engine = engine
        self.max_buffer = max_buffer
        self.scheduler = Scheduler(engine, policy, metrics_path=metrics_path)
        self._host = host
        self._port = port
        self._listener: Optional[socket.socket] = None
        self._stop = threading.Event()
        self._threads = []
        self._ids_lock = threading.Lock()
        self._live_ids: Dict[str, int] = {}

    # -- client ids ------------------------------------------------------------

    def claim_client_id(self, name: str) -> str:
        """client_name verbatim when free, else name-2, name-3, ..."""
        with self._ids_lock:
            if name not in self._live_ids:
                self._live_ids[name] = 1
                return name
            n = 2
            while "%s-%d" % (name, n) in self._live_ids:
                n += 1
            client_id = "%s-%d" % (name, n)
            self._live_ids[client_id] = 1
            return client_id

    def release_client_id(self, client_id: str) -> None:
        with self._ids_lock:
            self._live_ids.pop(client_id, None)

    # -- lifecycle ---------------------------------------------------------------

    @property
    def port(self) -> int:
        return self._port

    def start(self) -> "StreamServer":
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self._host, self._port))
        listener.listen(64)
        self._port = listener.getsockname()[1]
        self._listener = listener
        accept = threading.Thread(target=self._accept_loop, name="accept", daemon=True)
        cycle = threading.Thread(
            target=self.scheduler.loop, args=(self._stop,), name="scheduler", daemon=True
        )
        self._threads = [accept, cycle]
        accept.start()
        cycle.start()
        return self

    def _accept_loop(self) -> None:
        self._listener.settimeout(0.2)
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            session = _Session(self, conn)
            thread = threading.Thread(target=session.run, name="session", daemon=True)
            thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        for thread in self._threads:
            thread.join(timeout=5.0)

    def __enter__(self) -> "StreamServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def build_engine(spec: str, latency: LatencyModel, perturb: PerturbConfig) -> ASREngine:
    kind, _, rest = spec.partition(":")
    if kind == "mock":
        if not rest:
            raise ValueError("--engine mock needs a script path (mock:/path/to/script.tsv)")
        return MockEngine(MockScript.load(rest), perturb=perturb, latency=latency)
    if kind == "external":
        if not rest:
            raise ValueError("--engine external needs an address (external:host:port)")
        return ExternalEngine(rest)
    raise ValueError("unknown engine spec %r" % spec)


def _parse_listen(value: str):
    host, _, port = value.rpartition(":")
    return host or "127.0.0.1", int(port)


def _parse_pair(value: str):
    a, b = value.split(",")
    return float(a), float(b)


def _parse_perturb(value: str) -> PerturbConfig:
    p_punct, p_drop, seed = value.split(",")
    return PerturbConfig(p_punct=float(p_punct), p_drop=float(p_drop), seed=int(seed))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="scribepool-server",
        description="Multi-client streaming transcription server with batched inference.",
    )
    parser.add_argument("--listen", default="127.0.0.1:8765", help="host:port to bind")
    parser.add_argument("--wait-timeout", type=float, default=1.0, help="readiness wait, seconds [1,2]")
    parser.add_argument("--max-buffer", type=float, default=DEFAULT_MAX_BUFFER, help="per-client buffer cap, seconds [10,15]")
    parser.add_argument("--unready-action", default="skip-once", choices=["skip-once", "pause", "evict"])
    parser.add_argument("--engine", required=True, help="mock:<script path> or external:<address>")
    parser.add_argument("--metrics-csv", default=None, help="per-cycle scheduler metrics output")
    parser.add_argument("--latency", type=_parse_pair, default=(0.0, 0.0), metavar="A,B", help="mock latency seconds: a + b*batch_duration")
    parser.add_argument("--perturb", type=_parse_perturb, default=PerturbConfig(), metavar="P_PUNCT,P_DROP,SEED", help="mock output instability")
    args = parser.parse_args(argv)

    engine = build_engine(args.engine, LatencyModel(*args.latency), args.perturb)
    policy = ReadinessPolicy(wait_timeout=args.wait_timeout, unready_action=args.unready_action)
    host, port = _parse_listen(args.listen)
    server = StreamServer(
        engine,
        policy,
        max_buffer=args.max_buffer,
        host=host,
        port=port,
        metrics_path=args.metrics_csv,
    )
    server.start()
    print("listening on %s:%d" % (host, server.port), flush=True)
    try:
        while server.scheduler.healthy:
            time.sleep(0.5)
        print("scheduler unhealthy, shutting down", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 0
    finally:
        server.stop()


if __name__ == "__main__":
    sys.exit(main())
