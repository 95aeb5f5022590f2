"""Local-agreement hypothesis buffer.

A word becomes confirmed only when two consecutive inference passes agree
on it (per-token qratio >= CONFIRM_THRESHOLD). The newest pass always
becomes the comparison base for the next one. Confirmed output is
append-only with non-decreasing timestamps; nothing is ever retracted.
"""

from typing import List, Optional

from .textsim import qratio
from .types import (
    TIME_EPS,
    TrimBeyondConfirmedError,
    WordToken,
    join_words,
    validate_word_order,
)

ANCHOR_THRESHOLD = 98.0
CONFIRM_THRESHOLD = 95.0


def _agreeing_prefix_len(a: List[WordToken], b: List[WordToken], threshold: float) -> int:
    n = 0
    limit = min(len(a), len(b))
    while n < limit and qratio(a[n].text, b[n].text) >= threshold:
        n += 1
    return n


class HypothesisBuffer:
    """Agreement state for a single client stream.

    previous holds the unconfirmed tail of the last consumed pass,
    incoming the not-yet-consumed newest pass. confirmed is bookkeeping
    for already-emitted tokens (trimming prunes it); last_confirmed_end
    is the confirmed time frontier.
    """

    def __init__(self):
        self.confirmed: List[WordToken] = []
        self.previous: List[WordToken] = []
        self.incoming: Optional[List[WordToken]] = None
        self.last_confirmed_end: float = 0.0
        self.anchor_len: int = 0
        # (old previous, incoming) kept for fallback_confirm when confirm()
        # consumed an incoming without confirming anything. Invalidated by
        # any newer insert or successful confirm so a stale fallback can
        # never reorder confirmed output.
        self._fallback_pair = None

    def insert_segment(self, new_words) -> int:
        """Store the newest pass; returns the overlap anchor length.

        The anchor is the longest run of leading position-aligned pairs
        (previous[i], new[i]) with qratio >= ANCHOR_THRESHOLD. Tokens at or
        before the confirmed frontier are dropped here so re-emitted old
        words cannot be double confirmed.
        """
        words = list(new_words)
        validate_word_order(words)
        words = [w for w in words if w.start >= self.last_confirmed_end - TIME_EPS]
        self._fallback_pair = None
        self.anchor_len = _agreeing_prefix_len(self.previous, words, ANCHOR_THRESHOLD)
        self.incoming = words
        return self.anchor_len

    def confirm(self) -> List[WordToken]:
        """Confirm the agreeing leading run of incoming against previous.

        Always consumes incoming: the remaining tail becomes the new
        previous. Returns the newly confirmed tokens (possibly empty).
        """
        if self.incoming is None:
            return []
        inc = self.incoming
        prev = self.previous
        self.incoming = None
        n = _agreeing_prefix_len(prev, inc, CONFIRM_THRESHOLD)
        self.previous = inc[n:]
        if n:
            newly = inc[:n]
            self.confirmed.extend(newly)
            self.last_confirmed_end = newly[-1].end
            self._fallback_pair = None
            return list(newly)
        self._fallback_pair = (prev, inc)
        return []

    def fallback_confirm(self) -> List[WordToken]:
        """Salvage a confirmation after confirm() came up empty.

        Takes the first half (by word count, rounded up) of the old
        previous pass, scores each of its prefixes against each incoming
        prefix that ends within the half's time span, picks the highest
        qratio of the joined texts (ties: longer incoming prefix, then
        longer half prefix), then applies the usual per-token >= 95 gate
        to the winning pair.
        """
        pair = self._fallback_pair
        self._fallback_pair = None
        if pair is None:
            return []
        prev, inc = pair
        if not prev or not inc:
            return []
        half = prev[: (len(prev) + 1) // 2]
        cutoff = half[0].start + (half[-1].end - half[0].start) + TIME_EPS
        n_candidates = 0
        while n_candidates < len(inc) and inc[n_candidates].end <= cutoff:
            n_candidates += 1
        if n_candidates == 0:
            return []
        best = None  # (score, q, p)
        half_text = ""
        for p in range(1, len(half) + 1):
            half_text = half[p - 1].text if p == 1 else half_text + " " + half[p - 1].text
            inc_text = ""
            for q in range(1, n_candidates + 1):
                inc_text = inc[q - 1].text if q == 1 else inc_text + " " + inc[q - 1].text
                key = (qratio(half_text, inc_text), q, p)
                if best is None or key > best:
                    best = key
        _, q_best, p_best = best
        k = _agreeing_prefix_len(half[:p_best], inc[:q_best], CONFIRM_THRESHOLD)
        if k == 0:
            return []
        newly = inc[:k]
        self.confirmed.extend(newly)
        self.last_confirmed_end = newly[-1].end
        # confirm() already promoted inc to previous; strip the head we
        # just confirmed.
        self.previous = inc[k:]
        return list(newly)

    def drop_before(self, t: float) -> None:
        """Prune bookkeeping for tokens ending before t (trim support)."""
        if t > self.last_confirmed_end + TIME_EPS:
            raise TrimBeyondConfirmedError(
                "drop_before(%.6f) past confirmed frontier %.6f" % (t, self.last_confirmed_end)
            )
        keep = lambda w: w.end >= t - TIME_EPS
        self.confirmed = [w for w in self.confirmed if keep(w)]
        self.previous = [w for w in self.previous if keep(w)]
        if self.incoming is not None:
            self.incoming = [w for w in self.incoming if keep(w)]

    @property
    def unconfirmed_tail(self) -> List[WordToken]:
        """Most recent hypothesis beyond the confirmed frontier."""
        return list(self.incoming if self.incoming is not None else self.previous)

    @property
    def confirmed_text(self) -> str:
        return join_words(self.confirmed)
