"""Shared builders for the test suite."""

from typing import Optional, Sequence, Tuple

import numpy as np
import pytest

from scribepool.engine import MockScript
from scribepool.types import SAMPLE_RATE, WordToken


def make_words(
    texts: Sequence[str],
    start: float = 0.0,
    duration: float = 0.25,
    gap: float = 0.05,
) -> Tuple[WordToken, ...]:
    """Evenly spaced tokens; durations stay > 0.2 s so the evaluation
    slice slack cannot pull in a neighbouring word."""
    out = []
    t = start
    for text in texts:
        out.append(WordToken(t, t + duration, text))
        t += duration + gap
    return tuple(out)


def make_script(
    n_tracks: int,
    n_words: int,
    prefix: str = "client",
    vocab: Optional[Sequence[str]] = None,
) -> MockScript:
    vocab = list(vocab or ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot"])
    tracks = {}
    for k in range(n_tracks):
        texts = [vocab[(k + i) % len(vocab)] for i in range(n_words)]
        tracks["%s%02d" % (prefix, k)] = make_words(texts)
    return MockScript(tracks)


def silence(seconds: float) -> np.ndarray:
    return np.zeros(int(round(seconds * SAMPLE_RATE)), dtype=np.int16)


def ramp(n: int, start: int = 0) -> np.ndarray:
    """Distinct int16 values so sample-drop arithmetic is observable."""
    return (np.arange(start, start + n) % 20000).astype(np.int16)


def feed_seconds(svc, seconds: float, seq0: int = 0) -> int:
    """Append `seconds` of ramp audio in maximal 1 s chunks.

    The ramp continues across calls as long as earlier feeds used whole
    seconds (stream sample index = seq * SAMPLE_RATE then)."""
    from scribepool.types import AudioChunk

    start = seq0 * SAMPLE_RATE
    total = int(round(seconds * SAMPLE_RATE))
    sent = 0
    seq = seq0
    while sent < total:
        n = min(SAMPLE_RATE, total - sent)
        svc.append_audio(
            AudioChunk(client_id=svc.client_id, seq=seq, samples=ramp(n, start + sent))
        )
        sent += n
        seq += 1
    return seq


@pytest.fixture
def words():
    return make_words
