"""Text similarity primitives used by agreement and by evaluation.

Distances operate on Unicode code points (plain Python strings). qratio
values are percentages in [0, 100]; every threshold comparison in this
codebase is inclusive (>=).
"""

import unicodedata


def indel_distance(s1: str, s2: str) -> int:
    """Minimum insertions+deletions turning s1 into s2.

    Equivalent to a Levenshtein distance where substitution costs 2, which
    reduces to len(s1) + len(s2) - 2 * LCS(s1, s2).
    """
    if s1 == s2:
        return 0
    # Keep the shorter string in the inner row.
    if len(s2) < len(s1):
        s1, s2 = s2, s1
    if not s1:
        return len(s2)
    row = [0] * (len(s1) + 1)
    for cb in s2:
        diag = 0  # row[a-1] from the previous iteration
        for a in range(1, len(s1) + 1):
            cur = row[a]
            if s1[a - 1] == cb:
                row[a] = diag + 1
            elif row[a - 1] > cur:
                row[a] = row[a - 1]
            diag = cur
    return len(s1) + len(s2) - 2 * row[len(s1)]


def qratio(s1: str, s2: str) -> float:
    """Normalized indel similarity as a percentage.

    Two empty strings are defined as 100.0.
    """
    total = len(s1) + len(s2)
    if total == 0:
        return 100.0
    return (1.0 - indel_distance(s1, s2) / total) * 100.0


def normalize_light(s: str) -> str:
    """Case-fold, strip Unicode punctuation, collapse whitespace runs."""
    folded = s.lower()
    kept = []
    for ch in folded:
        if unicodedata.category(ch).startswith("P"):
            continue
        kept.append(ch)
    return " ".join("".join(kept).split())


def qratio_light(s1: str, s2: str) -> float:
    """qratio after normalize_light on both sides."""
    return qratio(normalize_light(s1), normalize_light(s2))
