"""String similarity measures used for speaker matching.

All ratios are on a 0-100 scale and follow the usual normalised-Indel family:

``ratio(a, b)``
    ``100 * (1 - indel(a, b) / (len(a) + len(b)))`` where ``indel`` is the
    edit distance with insertions and deletions only (substitution costs 2).
    Two empty strings score 100.
``token_sort_ratio``
    ``ratio`` of the whitespace tokens sorted and re-joined with single spaces.
``partial_ratio``
    Best ``ratio`` of the shorter string against every window of the longer
    one with the shorter one's length, plus the truncated windows hanging off
    either end. Equal-length inputs are also tried the other way round.
``token_set_ratio``
    With ``I`` the sorted intersection of the two token sets and ``A``, ``B``
    the sorted remainders: 100 if ``I`` is non-empty and ``A`` or ``B`` is
    empty, else the maximum of ``ratio(I, I+A)``, ``ratio(I, I+B)`` and
    ``ratio(I+A, I+B)`` (the first two only when ``I`` is non-empty).

Matching callers pass strings through :func:`normalise_name` first.
"""

from __future__ import annotations

import re
import unicodedata

VOWELS = frozenset("AEIOU")
_NON_ALNUM = re.compile(r"[^0-9A-Z]+")


def fold(text: str) -> str:
    """Strip diacritics and upper-case."""
    decomposed = unicodedata.normalize("NFKD", text)
    return "".join(ch for ch in decomposed if not unicodedata.combining(ch)).upper()


def normalise_name(text: str) -> str:
    """Upper-cased, accent-folded, punctuation replaced by single spaces."""
    return _NON_ALNUM.sub(" ", fold(text)).strip()


def lcs_length(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return 0
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0]
        for j, cb in enumerate(b):
            if ca == cb:
                cur.append(prev[j] + 1)
            else:
                cur.append(cur[j] if cur[j] > prev[j + 1] else prev[j + 1])
        prev = cur
    return prev[-1]


def indel_distance(a: str, b: str) -> int:
    return len(a) + len(b) - 2 * lcs_length(a, b)


def ratio(a: str, b: str) -> float:
    total = len(a) + len(b)
    if total == 0:
        return 100.0
    return 100.0 * (1.0 - indel_distance(a, b) / total)


def token_sort_ratio(a: str, b: str) -> float:
    return ratio(" ".join(sorted(a.split())), " ".join(sorted(b.split())))


def partial_ratio(a: str, b: str) -> float:
    if not a and not b:
        return 100.0
    if not a or not b:
        return 0.0
    best = _partial(a, b) if len(a) <= len(b) else _partial(b, a)
    if len(a) == len(b) and best < 100.0:
        best = max(best, _partial(b, a))
    return best


def _partial(short: str, long: str) -> float:
    n, m = len(short), len(long)
    best = 0.0
    windows = [long[:i] for i in range(1, n)]
    windows += [long[i:i + n] for i in range(m - n + 1)]
    windows += [long[i:] for i in range(m - n + 1, m)]
    for window in windows:
        score = ratio(short, window)
        if score > best:
            best = score
            if best == 100.0:
                break
    return best


def token_set_ratio(a: str, b: str) -> float:
    ta, tb = set(a.split()), set(b.split())
    if not ta or not tb:
        return 0.0
    inter = sorted(ta & tb)
    diff_ab = sorted(ta - tb)
    diff_ba = sorted(tb - ta)
    if inter and (not diff_ab or not diff_ba):
        return 100.0
    sect = " ".join(inter)
    combined_ab = " ".join(inter + diff_ab)
    combined_ba = " ".join(inter + diff_ba)
    scores = [ratio(combined_ab, combined_ba)]
    if sect:
        scores += [ratio(sect, combined_ab), ratio(sect, combined_ba)]
    return max(scores)


def weighted_levenshtein(a: str, b: str, vowel_cost: float = 0.5, default_cost: float = 1.0) -> float:
    """Edit distance where swapping one vowel for another is cheaper.

    Characters are compared after accent folding and upper-casing. Insertions
    and deletions cost ``default_cost``.
    """
    a, b = fold(a), fold(b)
    prev = [j * default_cost for j in range(len(b) + 1)]
    for i, ca in enumerate(a, 1):
        cur = [i * default_cost]
        for j, cb in enumerate(b, 1):
            if ca == cb:
                sub = 0.0
            elif ca in VOWELS and cb in VOWELS:
                sub = vowel_cost
            else:
                sub = default_cost
            cur.append(min(prev[j - 1] + sub, prev[j] + default_cost, cur[j - 1] + default_cost))
        prev = cur
    return prev[-1]
