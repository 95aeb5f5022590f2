"""Quality and latency metrics for streamed transcription responses.

WER is computed on whitespace-split raw text with unit edit costs, so
formatting differences count against it; the "light" similarity is the
formatting-insensitive counterpart (see textsim.normalize_light).
"""

import csv
from dataclasses import dataclass, fields
from statistics import mean
from typing import Dict, List, Optional, Sequence, Tuple

from .textsim import qratio, qratio_light
from .transport import TranscriptUpdate
from .types import WordToken

SLICE_SLACK_SECONDS = 0.2


class UndefinedWerError(ValueError):
    """WER against an empty reference is undefined."""


def wer(ref_words: Sequence[str], hyp_words: Sequence[str]) -> Tuple[float, int, int, int]:
    """Word error rate with its (substitutions, deletions, insertions) split.

    Minimal unit-cost alignment; when several minimal alignments exist the
    backtrace prefers match/substitute over delete over insert, which
    keeps the split deterministic.
    """
    if not ref_words:
        raise UndefinedWerError("reference is empty")
    ref = list(ref_words)
    hyp = list(hyp_words)
    # Each cell carries (cost, S, D, I); rows roll over the reference axis.
    prev = [(j, 0, 0, j) for j in range(len(hyp) + 1)]
    for i in range(1, len(ref) + 1):
        cur = [(i, 0, i, 0)]
        for j in range(1, len(hyp) + 1):
            dc, ds, dd, di = prev[j - 1]
            if ref[i - 1] == hyp[j - 1]:
                best = (dc, ds, dd, di)
            else:
                best = (dc + 1, ds + 1, dd, di)
            uc, us, ud, ui = prev[j]
            if uc + 1 < best[0]:
                best = (uc + 1, us, ud + 1, ui)
            lc, ls, ld, li = cur[j - 1]
            if lc + 1 < best[0]:
                best = (lc + 1, ls, ld, li + 1)
            cur.append(best)
        prev = cur
    cost, s, d, i = prev[-1]
    return cost / len(ref), s, d, i


def reference_slice(
    ref_words: Sequence[WordToken], start: float, end: float
) -> List[WordToken]:
    """Reference words lying fully inside [start, end] widened by the slack."""
    lo = start - SLICE_SLACK_SECONDS
    hi = end + SLICE_SLACK_SECONDS
    return [w for w in ref_words if w.start >= lo and w.end <= hi]


def response_similarity(
    ref_words: Sequence[WordToken], response: TranscriptUpdate
) -> Optional[Tuple[float, float]]:
    """(strict, light) qratio of the response against its reference slice.

    None when no reference word falls inside the response's span; the
    caller should skip the record and count it.
    """
    if not response.words:
        raise ValueError("response carries no words")
    piece = reference_slice(ref_words, response.words[0].start, response.words[-1].end)
    if not piece:
        return None
    ref_text = " ".join(w.text for w in piece)
    return qratio(ref_text, response.text), qratio_light(ref_text, response.text)


def response_wer(
    ref_words: Sequence[WordToken], response: TranscriptUpdate
) -> Optional[float]:
    """WER of one response against its reference slice, None when the slice is empty."""
    piece = reference_slice(ref_words, response.words[0].start, response.words[-1].end)
    if not piece:
        return None
    rate, _, _, _ = wer(" ".join(w.text for w in piece).split(), response.text.split())
    return rate


@dataclass
class MetricsRecord:
    """One row per server response; field order is the CSV header order."""

    client: str
    response_kind: str
    emit_wall_time: float
    segment_end_stream_time: float
    delay_s: float
    wer: Optional[float]
    strict_sim: Optional[float]
    light_sim: Optional[float]


METRICS_FIELDS = [f.name for f in fields(MetricsRecord)]


def write_records_csv(path: str, records: Sequence[MetricsRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_FIELDS)
        for r in records:
            writer.writerow(
                [
                    r.client,
                    r.response_kind,
                    "%.6f" % r.emit_wall_time,
                    "%.6f" % r.segment_end_stream_time,
                    "%.6f" % r.delay_s,
                    "" if r.wer is None else "%.6f" % r.wer,
                    "" if r.strict_sim is None else "%.6f" % r.strict_sim,
                    "" if r.light_sim is None else "%.6f" % r.light_sim,
                ]
            )


@dataclass
class KindSummary:
    """Mean delay per response kind, with the hypothesis-first sanity check."""

    mean_hypothesis_delay: Optional[float]
    mean_confirmed_delay: Optional[float]
    error: Optional[str] = None


def hypothesis_vs_confirmed(records: Sequence[MetricsRecord]) -> KindSummary:
    """Mean delay per kind; hypothesis responses must not lag confirmations.

    Raises when the hypothesis mean exceeds the confirmed mean (equality is
    fine). Missing hypothesis records are reported as an error flag, not an
    exception, so batch summaries stay usable.
    """
    hyp = [r.delay_s for r in records if r.response_kind == "hypothesis"]
    conf = [r.delay_s for r in records if r.response_kind == "confirmed"]
    if not hyp:
        return KindSummary(None, mean(conf) if conf else None, error="no hypotheses")
    h, c = mean(hyp), mean(conf) if conf else None
    if c is not None and h > c:
        raise ValueError(
            "hypothesis responses lag confirmations (%.3fs > %.3fs)" % (h, c)
        )
    return KindSummary(h, c)


def delay_by_client(records: Sequence[MetricsRecord], kind: str) -> Dict[str, List[float]]:
    out: Dict[str, List[float]] = {}
    for r in records:
        if r.response_kind == kind:
            out.setdefault(r.client, []).append(r.delay_s)
    return out
