from functools import lru_cache

import pytest
from hypothesis import given, settings, strategies as st
from rapidfuzz import fuzz as rf
from rapidfuzz.distance import Indel

from parldoc import fuzz

names = st.text(alphabet="ABEIO ", max_size=12)
small = st.text(alphabet="ABE", max_size=7)


@settings(max_examples=500)
@given(names, names)
def test_ratios_match_rapidfuzz(a, b):
    assert fuzz.indel_distance(a, b) == Indel.distance(a, b)
    assert fuzz.ratio(a, b) == pytest.approx(rf.ratio(a, b))
    assert fuzz.token_sort_ratio(a, b) == pytest.approx(rf.token_sort_ratio(a, b))
    assert fuzz.token_set_ratio(a, b) == pytest.approx(rf.token_set_ratio(a, b))


@settings(max_examples=500)
@given(names, names)
def test_partial_ratio_matches_rapidfuzz(a, b):
    assert fuzz.partial_ratio(a, b) == pytest.approx(rf.partial_ratio(a, b))


@pytest.mark.parametrize("a, b", [
    ("MINGHETTI", "MINGHETTL"), ("MINGHETTI MARCO", "MARCO MINGHETTI"), ("DE PRETIS", "DEPRETIS AGOSTINO"),
    ("ROSSI", "ROSSI GIUSEPPE"), ("", ""), ("A", ""),
])
def test_named_examples_match_rapidfuzz(a, b):
    for ours, theirs in ((fuzz.ratio, rf.ratio), (fuzz.token_sort_ratio, rf.token_sort_ratio),
                         (fuzz.partial_ratio, rf.partial_ratio), (fuzz.token_set_ratio, rf.token_set_ratio)):
        assert ours(a, b) == pytest.approx(theirs(a, b)), ours.__name__


def test_single_letter_ocr_error_score():
    # one substitution over 18 characters: 2 indel edits
    assert fuzz.ratio("MINGHETTI", "MINGHETTL") == pytest.approx(100 * 16 / 18)


@pytest.mark.parametrize("text, expected", [
    ("Minghetti", "MINGHETTI"), ("De Pretis, A.", "DE PRETIS A"), ("Nicotèra", "NICOTERA"), ("  d'Ondes-Reggio ", "D ONDES REGGIO"),
])
def test_normalise_name(text, expected):
    assert fuzz.normalise_name(text) == expected


# -- weighted Levenshtein ---------------------------------------------------


@pytest.mark.parametrize("a, b, expected", [
    ("ROSSI", "ROSSI", 0.0), ("ROSSI", "ROSSE", 0.5), ("ROSSI", "ROSSO", 0.5), ("ROSSI", "ROSST", 1.0),
    ("ROSSI", "ROSS", 1.0), ("", "ABC", 3.0), ("MINGHETTI", "MENGHETTA", 1.0), ("Nicotèra", "NICOTERA", 0.0),
])
def test_weighted_levenshtein_cases(a, b, expected):
    assert fuzz.weighted_levenshtein(a, b) == expected


def brute_weighted(a: str, b: str, vowel: float = 0.5, default: float = 1.0) -> float:
    """Top-down recursion over the three edit choices."""
    vowels = set("AEIOU")

    @lru_cache(maxsize=None)
    def go(i: int, j: int) -> float:
        if i == len(a):
            return (len(b) - j) * default
        if j == len(b):
            return (len(a) - i) * default
        if a[i] == b[j]:
            sub = 0.0
        elif a[i] in vowels and b[j] in vowels:
            sub = vowel
        else:
            sub = default
        return min(sub + go(i + 1, j + 1), default + go(i + 1, j), default + go(i, j + 1))

    return go(0, 0)


@settings(max_examples=500)
@given(small, small)
def test_weighted_levenshtein_oracle(a, b):
    assert fuzz.weighted_levenshtein(a, b) == brute_weighted(a, b)


@given(small, small, small)
def test_weighted_levenshtein_metric(a, b, c):
    d = fuzz.weighted_levenshtein
    assert d(a, a) == 0
    assert d(a, b) == d(b, a)
    assert d(a, c) <= d(a, b) + d(b, c)
    assert (d(a, b) == 0) == (a == b)


@given(small, small)
def test_equal_costs_reduce_to_levenshtein(a, b):
    from rapidfuzz.distance import Levenshtein
    assert fuzz.weighted_levenshtein(a, b, vowel_cost=1.0) == Levenshtein.distance(a, b)


@given(small, small)
def test_vowel_weighting_never_increases_distance(a, b):
    assert fuzz.weighted_levenshtein(a, b) <= fuzz.weighted_levenshtein(a, b, vowel_cost=1.0)
