import itertools

import pytest
from hypothesis import given, strategies as st

from scribepool.textsim import indel_distance, normalize_light, qratio, qratio_light


def edit_indel_oracle(s1: str, s2: str) -> int:
    """Brute-force DP with ins=1, del=1, sub=2 (the definitional route;
    the production code goes through the LCS identity instead)."""
    prev = list(range(len(s2) + 1))
    for i in range(1, len(s1) + 1):
        cur = [i]
        for j in range(1, len(s2) + 1):
            sub = prev[j - 1] + (0 if s1[i - 1] == s2[j - 1] else 2)
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, sub))
        prev = cur
    return prev[-1]


short_text = st.text(alphabet="abc", max_size=8)
any_text = st.text(max_size=24)


class TestIndelDistance:
    def test_identical(self):
        assert indel_distance("abc", "abc") == 0

    def test_disjoint(self):
        assert indel_distance("ab", "cd") == 4

    def test_kitten_sitting(self):
        # LCS("kitten", "sitting") = 4, so 6 + 7 - 8 = 5.
        assert indel_distance("kitten", "sitting") == 5
        assert edit_indel_oracle("kitten", "sitting") == 5

    def test_against_empty(self):
        assert indel_distance("", "") == 0
        assert indel_distance("abc", "") == 3

    def test_exhaustive_short_pairs_match_oracle(self):
        strings = [
            "".join(p)
            for n in range(5)
            for p in itertools.product("abc", repeat=n)
        ]
        for s1 in strings:
            for s2 in strings:
                assert indel_distance(s1, s2) == edit_indel_oracle(s1, s2), (s1, s2)

    @given(any_text, any_text)
    def test_random_pairs_match_oracle(self, s1, s2):
        assert indel_distance(s1, s2) == edit_indel_oracle(s1, s2)

    @given(any_text, any_text)
    def test_symmetry(self, s1, s2):
        assert indel_distance(s1, s2) == indel_distance(s2, s1)


class TestQratio:
    def test_identical(self):
        assert qratio("abc", "abc") == 100.0

    def test_kitten_sitting(self):
        assert qratio("kitten", "sitting") == pytest.approx((1 - 5 / 13) * 100, abs=1e-9)

    def test_trailing_period(self):
        assert qratio("world", "world.") == pytest.approx((1 - 1 / 11) * 100, abs=1e-9)

    def test_both_empty_is_maximal(self):
        assert qratio("", "") == 100.0

    @given(any_text, any_text)
    def test_formula(self, s1, s2):
        total = len(s1) + len(s2)
        if total == 0:
            assert qratio(s1, s2) == 100.0
        else:
            d = edit_indel_oracle(s1, s2)
            assert qratio(s1, s2) == pytest.approx((1 - d / total) * 100, abs=1e-9)

    @given(any_text, any_text)
    def test_bounds_and_equality(self, s1, s2):
        score = qratio(s1, s2)
        assert 0.0 <= score <= 100.0
        assert (score == 100.0) == (s1 == s2)

    @given(any_text, any_text)
    def test_symmetry(self, s1, s2):
        assert qratio(s1, s2) == qratio(s2, s1)


class TestNormalizeLight:
    def test_case_and_punctuation(self):
        assert normalize_light("Hello, World!") == "hello world"

    def test_apostrophe(self):
        assert normalize_light("it's") == "its"

    def test_whitespace_collapse(self):
        assert normalize_light("  a,,  b ") == "a b"

    def test_unicode_punctuation(self):
        # U+2019 right single quote and U+00BF are punctuation categories.
        assert normalize_light("don’t ¿qué?") == "dont qué"


class TestQratioLight:
    def test_period_ignored(self):
        assert qratio_light("World.", "world") == 100.0

    def test_case_ignored(self):
        assert qratio_light("ABC", "abc") == 100.0

    def test_kitten_sitting_normalized(self):
        assert qratio_light("kitten", "Sitting!") == pytest.approx((1 - 5 / 13) * 100, abs=1e-9)

    @given(any_text, any_text)
    def test_matches_qratio_of_normalized(self, s1, s2):
        assert qratio_light(s1, s2) == qratio(normalize_light(s1), normalize_light(s2))

    @given(st.text(alphabet="abcXYZ ", max_size=24))
    def test_invariant_under_case_and_punctuation(self, s):
        # ASCII only: .upper() is not an involution across all of Unicode
        # ("ß".upper() == "SS").
        assert qratio_light(s.upper(), s) == 100.0
        assert qratio_light(s + "!!", s) == 100.0
        assert qratio_light("¡" + s + ".", s.lower()) == 100.0
