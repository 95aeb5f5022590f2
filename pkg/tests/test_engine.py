import socket
import threading
import time

import numpy as np
import pytest

from scribepool.engine import (
    EngineRequest,
    ExternalEngine,
    LatencyModel,
    MockEngine,
    MockScript,
    PerturbConfig,
    decode_engine_reply,
    decode_engine_request,
    encode_engine_reply,
    encode_engine_request,
    mock_emit,
    serve_engine,
)
from scribepool.transport import read_frame
from scribepool.types import (
    SAMPLE_RATE,
    ClipDescriptor,
    EngineError,
    Segment,
    WordToken,
)

from conftest import make_words, silence


def request_for(seconds_by_client, offsets=None, hints=None):
    """Tile one clip per (client, seconds) pair over a silent waveform."""
    clips = []
    edge = 0.0
    for client_id, seconds in seconds_by_client:
        clips.append(ClipDescriptor(client_id, edge, edge + seconds))
        edge += seconds
    return EngineRequest(
        waveform=silence(edge),
        clips=tuple(clips),
        offsets=tuple(offsets or [0.0] * len(clips)),
        language_hints=tuple(hints or [None] * len(clips)),
    )


class TestEngineRequest:
    def test_batch_duration(self):
        req = request_for([("a", 2.0), ("b", 3.0)])
        assert req.batch_duration == pytest.approx(5.0)

    def test_rejects_clip_gap(self):
        with pytest.raises(EngineError):
            EngineRequest(
                waveform=silence(4.0),
                clips=(ClipDescriptor("a", 0.0, 2.0), ClipDescriptor("b", 2.5, 4.0)),
                offsets=(0.0, 0.0),
                language_hints=(None, None),
            )

    def test_rejects_nonzero_first_start(self):
        with pytest.raises(EngineError):
            EngineRequest(
                waveform=silence(2.0),
                clips=(ClipDescriptor("a", 0.5, 2.0),),
                offsets=(0.0,),
                language_hints=(None,),
            )

    def test_rejects_waveform_overhang(self):
        with pytest.raises(EngineError):
            EngineRequest(
                waveform=silence(3.0),
                clips=(ClipDescriptor("a", 0.0, 2.0),),
                offsets=(0.0,),
                language_hints=(None,),
            )

    def test_rejects_misaligned_lengths(self):
        with pytest.raises(EngineError):
            EngineRequest(
                waveform=silence(1.0),
                clips=(ClipDescriptor("a", 0.0, 1.0),),
                offsets=(0.0, 1.0),
                language_hints=(None,),
            )


class TestLatencyModel:
    def test_constant(self):
        assert LatencyModel(a=0.1, b=0.0).seconds(99.0) == pytest.approx(0.1)

    def test_affine(self):
        assert LatencyModel(a=0.05, b=0.02).seconds(10.0) == pytest.approx(0.25)

    def test_zero_is_instant(self):
        model = LatencyModel()
        assert model.seconds(30.0) == 0.0
        engine = MockEngine(MockScript({}), latency=model)
        t0 = time.monotonic()
        engine.transcribe(request_for([("a", 1.0)]))
        assert time.monotonic() - t0 < 0.05

    def test_mock_engine_sleeps(self):
        engine = MockEngine(MockScript({}), latency=LatencyModel(a=0.1))
        t0 = time.monotonic()
        engine.transcribe(request_for([("a", 1.0)]))
        assert time.monotonic() - t0 >= 0.1


class TestMockScript:
    def test_round_trip(self, tmp_path):
        script = MockScript(
            {
                "alice": make_words(["ciao", "mondo"]),
                "bob": make_words(["hello."]),
            }
        )
        path = tmp_path / "script.tsv"
        script.dump(str(path))
        assert MockScript.load(str(path)) == script

    def test_load_skips_comments_and_blanks(self, tmp_path):
        path = tmp_path / "script.tsv"
        path.write_text("# heading\n\nalice\t0.0\t0.25\thi\n")
        script = MockScript.load(str(path))
        assert script.tracks == {"alice": (WordToken(0.0, 0.25, "hi"),)}

    def test_load_rejects_bad_field_count(self, tmp_path):
        path = tmp_path / "script.tsv"
        path.write_text("alice\t0.0\thi\n")
        with pytest.raises(ValueError):
            MockScript.load(str(path))

    def test_resolve_exact_and_suffix(self):
        script = MockScript({"alice": make_words(["a"]), "alice-2": make_words(["b"])})
        assert script.resolve("alice")[0].text == "a"
        # Exact match wins over suffix stripping.
        assert script.resolve("alice-2")[0].text == "b"
        # De-duplicated names reuse the base track.
        assert script.resolve("alice-7")[0].text == "a"
        assert script.resolve("alice-x") == ()
        assert script.resolve("nobody") == ()

    def test_text_of(self):
        script = MockScript({"alice": make_words(["ciao", "mondo"])})
        assert script.text_of("alice") == "ciao mondo"
        assert script.text_of("alice-3") == "ciao mondo"


WINDOW_TRACK = (
    WordToken(0.5, 0.9, "one"),
    WordToken(1.2, 1.8, "two"),
    WordToken(2.1, 2.9, "three"),
    WordToken(4.2, 4.7, "four"),
)


class TestMockEmit:
    def test_unperturbed_window_is_verbatim(self):
        out = mock_emit(WINDOW_TRACK, "c", 0.0, 5.0, PerturbConfig())
        assert out == list(WINDOW_TRACK)

    def test_words_outside_window_are_excluded(self):
        out = mock_emit(WINDOW_TRACK, "c", 1.0, 3.0, PerturbConfig())
        assert [w.text for w in out] == ["two", "three"]

    def test_partial_overlap_is_excluded(self):
        # Word (0.5, 0.9) straddles a window starting at 0.6.
        out = mock_emit(WINDOW_TRACK, "c", 0.6, 5.0, PerturbConfig())
        assert [w.text for w in out] == ["two", "three", "four"]

    def test_p_punct_one_toggles_every_word(self):
        out = mock_emit(WINDOW_TRACK, "c", 0.0, 5.0, PerturbConfig(p_punct=1.0, seed=3))
        assert [w.text for w in out] == ["one.", "two.", "three.", "four."]
        dotted = (WordToken(0.0, 0.4, "hi."),)
        out = mock_emit(dotted, "c", 0.0, 1.0, PerturbConfig(p_punct=1.0))
        assert [w.text for w in out] == ["hi"]  # toggle removes an existing period

    def test_p_drop_one_drops_only_near_window_end(self):
        out = mock_emit(WINDOW_TRACK, "c", 0.0, 5.0, PerturbConfig(p_drop=1.0, seed=3))
        # "four" ends at 4.7, within 1.0 s of the window end 5.0 -> dropped.
        assert [w.text for w in out] == ["one", "two", "three"]

    def test_word_clear_of_window_end_is_never_dropped(self):
        out = mock_emit(WINDOW_TRACK[:1], "c", 0.0, 5.0, PerturbConfig(p_drop=1.0, seed=3))
        assert [w.text for w in out] == ["one"]

    def test_deterministic_per_seed(self):
        cfg = PerturbConfig(p_punct=0.5, p_drop=0.5, seed=42)
        first = mock_emit(WINDOW_TRACK, "c", 0.0, 5.0, cfg)
        second = mock_emit(WINDOW_TRACK, "c", 0.0, 5.0, cfg)
        assert first == second
        other_seed = mock_emit(WINDOW_TRACK, "c", 0.0, 5.0, PerturbConfig(p_punct=0.5, p_drop=0.5, seed=43))
        # Not required to differ, but with 4 words and p=0.5 seed 42 vs 43
        # diverge; pin it so a regression to seed-blind hashing shows up.
        assert first != other_seed


class TestMockEngine:
    def test_clip_lookup_emits_script_words(self):
        script = MockScript({"c1": (WordToken(0.2, 0.5, "hi"),)})
        engine = MockEngine(script)
        segments = engine.transcribe(request_for([("c1", 1.0)]))
        assert len(segments) == 1
        assert segments[0].words == (WordToken(0.2, 0.5, "hi"),)

    def test_two_clips_preserve_order_and_coordinates(self):
        script = MockScript(
            {
                "a": (WordToken(0.2, 0.5, "first"),),
                "b": (WordToken(0.1, 0.4, "second"),),
            }
        )
        engine = MockEngine(script)
        segments = engine.transcribe(request_for([("a", 1.0), ("b", 1.0)]))
        assert [s.words[0].text for s in segments] == ["first", "second"]
        # b's word is reported in shared-buffer coordinates: 1.0 + 0.1.
        assert segments[1].words[0].start == pytest.approx(1.1)
        assert segments[1].words[0].end == pytest.approx(1.4)

    def test_offset_selects_script_window(self):
        script = MockScript({"c": WINDOW_TRACK})
        engine = MockEngine(script)
        req = request_for([("c", 2.0)], offsets=[1.0])
        segments = engine.transcribe(req)
        # Window is stream time [1.0, 3.0): words two and three, shifted
        # into the clip (start 0.0) as 0.2-0.8 and 1.1-1.9.
        assert [w.text for w in segments[0].words] == ["two", "three"]
        assert segments[0].words[0].start == pytest.approx(0.2)
        assert segments[0].words[1].end == pytest.approx(1.9)

    def test_language_hint_echoed(self):
        engine = MockEngine(MockScript({}))
        segments = engine.transcribe(request_for([("a", 1.0), ("b", 1.0)], hints=["it", None]))
        assert [s.language for s in segments] == ["it", "unknown"]

    def test_batch_composition_does_not_change_output(self):
        script = MockScript(
            {
                "a": WINDOW_TRACK,
                "b": make_words(["x", "y", "z"]),
            }
        )
        engine = MockEngine(script, PerturbConfig(p_punct=0.4, p_drop=0.4, seed=9))
        alone = engine.transcribe(request_for([("a", 5.0)]))[0]
        paired = engine.transcribe(request_for([("b", 1.0), ("a", 5.0)]))[1]
        alone_words = [(w.text, round(w.start, 6), round(w.end, 6)) for w in alone.words]
        paired_words = [
            (w.text, round(w.start - 1.0, 6), round(w.end - 1.0, 6)) for w in paired.words
        ]
        assert alone_words == paired_words

    def test_identical_requests_identical_output(self):
        engine = MockEngine(MockScript({"a": WINDOW_TRACK}), PerturbConfig(p_punct=0.2, seed=5))
        req = request_for([("a", 5.0)])
        assert engine.transcribe(req) == engine.transcribe(req)


class TestAdapterCodec:
    def test_request_round_trip(self):
        req = request_for([("a", 1.0), ("b", 0.5)], offsets=[3.0, 0.0], hints=["en", None])
        waveform = np.arange(int(1.5 * SAMPLE_RATE), dtype=np.int16)
        req = EngineRequest(waveform, req.clips, req.offsets, req.language_hints)
        frame = encode_engine_request(req)

        class OneShot:
            def __init__(self, data):
                self.data = data

            def recv(self, n):
                out, self.data = self.data[:n], self.data[n:]
                return out

        tag, payload = read_frame(OneShot(frame))
        decoded = decode_engine_request(payload)
        assert decoded.clips == req.clips
        assert decoded.offsets == req.offsets
        assert decoded.language_hints == req.language_hints
        assert np.array_equal(decoded.waveform, waveform)

    def test_reply_round_trip(self):
        req = request_for([("a", 1.0), ("b", 1.0)])
        segments = [
            Segment(words=(WordToken(0.1, 0.4, "ciao"),), language="it"),
            Segment(words=(), language="unknown"),
        ]
        frame = encode_engine_reply(segments)
        payload = frame[5:]  # strip tag byte + length
        decoded = decode_engine_reply(payload, req)
        assert [s.language for s in decoded] == ["it", "unknown"]
        assert decoded[0].words == segments[0].words
        assert decoded[0].clip == req.clips[0]

    def test_reply_count_mismatch_rejected(self):
        req = request_for([("a", 1.0), ("b", 1.0)])
        frame = encode_engine_reply([Segment(words=(), language="en")])
        with pytest.raises(EngineError):
            decode_engine_reply(frame[5:], req)

    def test_truncated_request_rejected(self):
        with pytest.raises(EngineError):
            decode_engine_request(b"\x00")
        with pytest.raises(EngineError):
            decode_engine_request(b"\x00\x00\x00\xff{}")


class TestExternalEngine:
    @pytest.fixture
    def served_mock(self):
        script = MockScript({"c1": (WordToken(0.2, 0.5, "hi"),)})
        inner = MockEngine(script)
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.bind(("127.0.0.1", 0))
        listener.listen(1)
        port = listener.getsockname()[1]
        stop = threading.Event()
        thread = threading.Thread(target=serve_engine, args=(inner, listener, stop))
        thread.start()
        try:
            yield "127.0.0.1:%d" % port
        finally:
            stop.set()
            thread.join(timeout=5.0)
            listener.close()

    def test_loopback_matches_local_mock(self, served_mock):
        remote = ExternalEngine(served_mock)
        req = request_for([("c1", 1.0)])
        segments = remote.transcribe(req)
        assert len(segments) == 1
        assert segments[0].words == (WordToken(0.2, 0.5, "hi"),)
        # The connection is reused across calls.
        assert remote.transcribe(req)[0].words == segments[0].words
        remote.close()

    def test_connection_refused_is_engine_error(self):
        probe = socket.socket()
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
        probe.close()
        remote = ExternalEngine("127.0.0.1:%d" % port, connect_timeout=0.5)
        with pytest.raises(EngineError):
            remote.transcribe(request_for([("a", 1.0)]))
