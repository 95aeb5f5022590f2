import numpy as np
import pytest
from hypothesis import given, strategies as st

from scribepool.types import (
    SAMPLE_RATE,
    AudioChunk,
    ChunkSizeError,
    ClipDescriptor,
    InvalidSegmentError,
    MalformedChunkError,
    Segment,
    StreamDesyncError,
    WordToken,
    chunk_duration,
    decode_pcm16le,
    encode_pcm16le,
    validate_word_order,
)


class TestPcmCodec:
    def test_zero_sample(self):
        assert decode_pcm16le(b"\x00\x00").tolist() == [0]

    def test_max_positive(self):
        assert decode_pcm16le(b"\xff\x7f").tolist() == [32767]

    def test_mixed_pair(self):
        # 0x0001 little-endian, then 0x8000 = -32768
        assert decode_pcm16le(b"\x01\x00\x00\x80").tolist() == [1, -32768]

    def test_odd_length_rejected(self):
        with pytest.raises(MalformedChunkError):
            decode_pcm16le(b"\x01\x02\x03")

    @given(st.binary(max_size=4096).map(lambda b: b[: len(b) - len(b) % 2]))
    def test_encode_decode_identity(self, raw):
        assert encode_pcm16le(decode_pcm16le(raw)) == raw

    def test_encode_requires_int16(self):
        with pytest.raises(MalformedChunkError):
            encode_pcm16le(np.zeros(4, dtype=np.float32))


def _chunk(n_samples: int, seq: int = 0) -> AudioChunk:
    return AudioChunk(client_id="c", seq=seq, samples=np.zeros(n_samples, dtype=np.int16))


class TestAudioChunk:
    def test_full_second(self):
        assert chunk_duration(_chunk(16000)) == 1.0

    def test_half_second(self):
        assert chunk_duration(_chunk(8000)) == 0.5

    def test_over_one_second_rejected(self):
        with pytest.raises(ChunkSizeError):
            _chunk(16001)

    def test_empty_rejected(self):
        with pytest.raises(ChunkSizeError):
            _chunk(0)

    def test_negative_seq_rejected(self):
        with pytest.raises(StreamDesyncError):
            _chunk(100, seq=-1)

    def test_two_dimensional_rejected(self):
        with pytest.raises(MalformedChunkError):
            AudioChunk(client_id="c", seq=0, samples=np.zeros((2, 100), dtype=np.int16))

    def test_wrong_dtype_rejected(self):
        with pytest.raises(MalformedChunkError):
            AudioChunk(client_id="c", seq=0, samples=np.zeros(100, dtype=np.int32))

    @given(st.lists(st.integers(min_value=1, max_value=16000), min_size=1, max_size=50))
    def test_stream_time_accumulates_without_drift(self, sizes):
        # Cumulative stream time must equal the sample count divided once,
        # not a running float sum.
        total = sum(sizes)
        assert total / SAMPLE_RATE == sum(sizes) / SAMPLE_RATE


class TestWordToken:
    def test_end_before_start_rejected(self):
        with pytest.raises(InvalidSegmentError):
            WordToken(2.0, 1.0, "x")

    def test_zero_width_allowed(self):
        WordToken(1.0, 1.0, "x")

    def test_order_validation(self):
        good = (WordToken(0.0, 0.5, "a"), WordToken(0.5, 1.0, "b"))
        validate_word_order(good)
        overlapping = (WordToken(0.0, 0.6, "a"), WordToken(0.5, 1.0, "b"))
        with pytest.raises(InvalidSegmentError):
            validate_word_order(overlapping)
        unsorted = (WordToken(1.0, 1.5, "b"), WordToken(0.0, 0.5, "a"))
        with pytest.raises(InvalidSegmentError):
            validate_word_order(unsorted)


class TestSegment:
    def test_text_joined_from_words(self):
        seg = Segment(words=(WordToken(0.0, 0.3, "hello"), WordToken(0.4, 0.8, "world")))
        assert seg.text == "hello world"

    def test_empty_segment_has_empty_text(self):
        assert Segment(words=()).text == ""

    def test_unsorted_words_rejected(self):
        with pytest.raises(InvalidSegmentError):
            Segment(words=(WordToken(1.0, 1.5, "b"), WordToken(0.0, 0.5, "a")))


class TestClipDescriptor:
    def test_duration(self):
        assert ClipDescriptor("c", 3.0, 8.0).duration == 5.0

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            ClipDescriptor("c", 3.0, 3.0)
        with pytest.raises(ValueError):
            ClipDescriptor("c", -1.0, 3.0)
