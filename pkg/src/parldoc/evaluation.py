"""Transcription error rates and speaker-tagging scores against benchmark ground truth."""

from __future__ import annotations

import datetime as dt
import json
import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Sequence

from .ingest import extract_date_from_filename

log = logging.getLogger(__name__)

WW2_BOUNDARY = dt.date(1945, 9, 2)
SPLITS = ("global", "pre_ww2", "post_ww2")


@dataclass(frozen=True)
class EditCounts:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    reference_length: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def rate(self) -> float:
        """(S + D + I) / N, with an empty reference counting as N = 1 if anything was inserted."""
        if self.reference_length == 0:
            return float(self.insertions)
        return self.errors / self.reference_length

    def __add__(self, other: "EditCounts") -> "EditCounts":
        return EditCounts(self.substitutions + other.substitutions, self.deletions + other.deletions,
                          self.insertions + other.insertions, self.reference_length + other.reference_length)


def edit_counts(reference: Sequence[Hashable], hypothesis: Sequence[Hashable]) -> EditCounts:
    """Unit-cost alignment counts.

    Among minimal alignments the backtrace from the end prefers a diagonal
    step (match or substitution), then an insertion, then a deletion.
    """
    n, m = len(reference), len(hypothesis)
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    for j in range(m + 1):
        cost[0][j] = j
    for i in range(1, n + 1):
        row, prev = cost[i], cost[i - 1]
        row[0] = i
        r = reference[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (r != hypothesis[j - 1])
            ins = row[j - 1] + 1
            dele = prev[j] + 1
            row[j] = min(diag, ins, dele)

    s = d = ins_count = 0
    i, j = n, m
    while i or j:
        here = cost[i][j]
        if i and j:
            sub = reference[i - 1] != hypothesis[j - 1]
            if cost[i - 1][j - 1] + sub == here:
                s += sub
                i -= 1
                j -= 1
                continue
        if j and cost[i][j - 1] + 1 == here:
            ins_count += 1
            j -= 1
            continue
        d += 1
        i -= 1
    return EditCounts(s, d, ins_count, n)


def normalise_text(text: str) -> str:
    """NFC, whitespace runs collapsed to one space, ends stripped. Case is kept."""
    return " ".join(unicodedata.normalize("NFC", text).split())


def word_counts(reference: str, hypothesis: str) -> EditCounts:
    return edit_counts(normalise_text(reference).split(), normalise_text(hypothesis).split())


def char_counts(reference: str, hypothesis: str) -> EditCounts:
    return edit_counts(normalise_text(reference), normalise_text(hypothesis))


def wer(reference: str, hypothesis: str) -> float:
    return word_counts(reference, hypothesis).rate


def cer(reference: str, hypothesis: str) -> float:
    return char_counts(reference, hypothesis).rate


# -- tagging ----------------------------------------------------------------


@dataclass(frozen=True)
class TaggingCounts:
    true_positives: int = 0
    false_positives: int = 0
    false_negatives: int = 0

    def __add__(self, other: "TaggingCounts") -> "TaggingCounts":
        return TaggingCounts(self.true_positives + other.true_positives,
                             self.false_positives + other.false_positives,
                             self.false_negatives + other.false_negatives)


@dataclass(frozen=True)
class TaggingScores:
    precision: float
    recall: float
    f1: float
    counts: TaggingCounts
    precision_undefined: bool = False
    recall_undefined: bool = False

    def __iter__(self):
        return iter((self.precision, self.recall, self.f1))


def scores_from_counts(counts: TaggingCounts) -> TaggingScores:
    tp, fp, fn = counts.true_positives, counts.false_positives, counts.false_negatives
    p_undef, r_undef = tp + fp == 0, tp + fn == 0
    p = 0.0 if p_undef else tp / (tp + fp)
    r = 0.0 if r_undef else tp / (tp + fn)
    f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return TaggingScores(p, r, f1, counts, p_undef, r_undef)


def _overlap(a: str, b: str) -> int:
    ta, tb = Counter(normalise_text(a).split()), Counter(normalise_text(b).split())
    return sum((ta & tb).values())


def pair_segments(predicted: Sequence[str], gold: Sequence[str]) -> list[tuple[int, int]]:
    """Greedy one-to-one pairing by largest shared-token count; ties go to document order."""
    edges = []
    for i, p in enumerate(predicted):
        for j, g in enumerate(gold):
            ov = _overlap(p, g)
            if ov:
                edges.append((-ov, j, i))
    edges.sort()
    used_p, used_g, pairs = set(), set(), []
    for _, j, i in edges:
        if i not in used_p and j not in used_g:
            used_p.add(i)
            used_g.add(j)
            pairs.append((i, j))
    return sorted(pairs)


def tagging_counts(predicted: Sequence[tuple[str, str | None]], gold: Sequence[tuple[str, str | None]]) -> TaggingCounts:
    pairs = pair_segments([s for s, _ in predicted], [s for s, _ in gold])
    tp = fp = fn = 0
    paired_p = {i for i, _ in pairs}
    paired_g = {j for _, j in pairs}
    for i, j in pairs:
        p_link, g_link = predicted[i][1], gold[j][1]
        if p_link and g_link and p_link == g_link:
            tp += 1
            continue
        if p_link:
            fp += 1
        if g_link:
            fn += 1
    fp += sum(1 for i, (_, link) in enumerate(predicted) if link and i not in paired_p)
    fn += sum(1 for j, (_, link) in enumerate(gold) if link and j not in paired_g)
    return TaggingCounts(tp, fp, fn)


def tagging_scores(predicted: Sequence[tuple[str, str | None]], gold: Sequence[tuple[str, str | None]]) -> TaggingScores:
    """Precision, recall and F1 of speaker links over content-paired segments.

    A zero denominator yields 0 and sets the matching ``*_undefined`` flag.
    """
    return scores_from_counts(tagging_counts(predicted, gold))


# -- benchmark --------------------------------------------------------------


def period_of(date: dt.date, boundary: dt.date = WW2_BOUNDARY) -> str:
    return "pre_ww2" if date < boundary else "post_ww2"


@dataclass
class PageResult:
    page_id: str
    date: dt.date
    period: str
    words: EditCounts
    chars: EditCounts
    tags: TaggingCounts | None = None

    def to_dict(self) -> dict:
        out = {
            "page_id": self.page_id,
            "date": self.date.isoformat(),
            "period": self.period,
            "cer": self.chars.rate,
            "wer": self.words.rate,
            "char_edits": [self.chars.substitutions, self.chars.deletions, self.chars.insertions, self.chars.reference_length],
            "word_edits": [self.words.substitutions, self.words.deletions, self.words.insertions, self.words.reference_length],
        }
        if self.tags is not None:
            s = scores_from_counts(self.tags)
            out.update(precision=s.precision, recall=s.recall, f1=s.f1,
                       tp=self.tags.true_positives, fp=self.tags.false_positives, fn=self.tags.false_negatives)
        return out


@dataclass
class BenchmarkReport:
    pages: list[PageResult] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)

    def aggregate(self, split: str) -> dict:
        """Micro-averaged metrics: total edits over total reference length."""
        pages = [p for p in self.pages if split == "global" or p.period == split]
        words = sum((p.words for p in pages), EditCounts())
        chars = sum((p.chars for p in pages), EditCounts())
        tagged = [p.tags for p in pages if p.tags is not None]
        tags = scores_from_counts(sum(tagged, TaggingCounts()))
        return {
            "cer": chars.rate if pages else None,
            "wer": words.rate if pages else None,
            "precision": tags.precision if tagged else None,
            "recall": tags.recall if tagged else None,
            "f1": tags.f1 if tagged else None,
            "page_count": len(pages),
            "tagged_page_count": len(tagged),
        }

    def to_dict(self) -> dict:
        out = {split: self.aggregate(split) for split in SPLITS}
        out["pages"] = [p.to_dict() for p in self.pages]
        out["skipped"] = list(self.skipped)
        return out

    def to_table(self) -> str:
        def fmt(v):
            return "-" if v is None else f"{v:.3f}"

        lines = [f"{'split':<10} {'pages':>5} {'CER':>7} {'WER':>7} {'P':>7} {'R':>7} {'F1':>7}"]
        for split in SPLITS:
            a = self.aggregate(split)
            lines.append(f"{split:<10} {a['page_count']:>5} {fmt(a['cer']):>7} {fmt(a['wer']):>7} "
                         f"{fmt(a['precision']):>7} {fmt(a['recall']):>7} {fmt(a['f1']):>7}")
        if self.skipped:
            lines.append(f"skipped: {len(self.skipped)} page(s)")
        return "\n".join(lines) + "\n"


def _load_segments(path: Path) -> tuple[list[tuple[str, str | None]], dict]:
    """Read ``[{"content", "speaker_uri"}...]`` or an object with ``elements``/``segments``.

    Only ``text`` elements count when a ``type`` field is present.
    """
    data = json.loads(path.read_text(encoding="utf-8"))
    meta = {}
    if isinstance(data, dict):
        meta = data
        data = data.get("elements", data.get("segments", []))
    segments = []
    for entry in data:
        if entry.get("type", "text") != "text":
            continue
        segments.append((entry.get("content", ""), entry.get("speaker_uri") or entry.get("link")))
    return segments, meta


def run_benchmark(benchmark_dir: str | Path, pipeline_outputs: str | Path,
                  boundary: dt.date = WW2_BOUNDARY) -> BenchmarkReport:
    """Score pipeline outputs against a benchmark directory.

    Layout: ``<dir>/pages/<id>.png``, ``<dir>/transcriptions/<id>.txt`` and
    optionally ``<dir>/tags/<id>.json``. Hypotheses are ``<outputs>/<id>.txt``
    and, for tagging, ``<outputs>/<id>.json``. A page's date comes from its tag
    file's ``date`` field or else from the page id.
    """
    bench, outputs = Path(benchmark_dir), Path(pipeline_outputs)
    report = BenchmarkReport()
    pages_dir = bench / "pages"
    ids = sorted(p.stem for p in pages_dir.glob("*.png")) if pages_dir.is_dir() else []

    def skip(page_id: str, reason: str) -> None:
        log.warning("benchmark page %s skipped: %s", page_id, reason)
        report.skipped.append({"page_id": page_id, "reason": reason})

    for page_id in ids:
        ref_path = bench / "transcriptions" / f"{page_id}.txt"
        hyp_path = outputs / f"{page_id}.txt"
        if not ref_path.is_file():
            skip(page_id, "missing ground-truth transcription")
            continue
        if not hyp_path.is_file():
            skip(page_id, "missing pipeline transcription")
            continue
        gold_path = bench / "tags" / f"{page_id}.json"
        gold, meta = _load_segments(gold_path) if gold_path.is_file() else (None, {})
        date = None
        if meta.get("date"):
            date = dt.date.fromisoformat(meta["date"])
        if date is None:
            date = extract_date_from_filename(page_id)
        if date is None:
            skip(page_id, "no session date")
            continue
        ref = ref_path.read_text(encoding="utf-8")
        hyp = hyp_path.read_text(encoding="utf-8")
        tags = None
        pred_path = outputs / f"{page_id}.json"
        if gold is not None:
            predicted = _load_segments(pred_path)[0] if pred_path.is_file() else []
            tags = tagging_counts(predicted, gold)
        report.pages.append(PageResult(page_id, date, period_of(date, boundary),
                                       word_counts(ref, hyp), char_counts(ref, hyp), tags))
    return report
