"""Attachment scores, IV/OOV bucketing, the word-thirds masking ablation and result tables."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .corpus_io import MASK_CHAR, ROOT_INDEX, Sentence, Vocabulary

IV, OOV = "IV", "OOV"

MASK_PATTERNS = ("•bc", "a•c", "ab•", "a••", "•b•", "••c")
_ASCII_PATTERNS = {p.replace("•", "_"): p for p in MASK_PATTERNS}


@dataclass(frozen=True)
class Score:
    las: float
    uas: float
    total: int = 0
    per_bucket: Mapping[str, tuple[int, int]] = field(default_factory=dict)

    def bucket_las(self, bucket: str) -> float:
        correct, total = self.per_bucket.get(bucket, (0, 0))
        return correct / total if total else math.nan


def _check_counts(gold: Sequence[Sentence], predicted) -> None:
    if len(gold) != len(predicted):
        raise ValueError(f"{len(predicted)} predicted sentences for {len(gold)} gold sentences")
    for i, (g, p) in enumerate(zip(gold, predicted), start=1):
        if len(g) != len(p):
            raise ValueError(f"sentence {i}: {len(p)} predicted tokens for {len(g)} gold tokens")


def score(gold: Sequence[Sentence], predicted: Sequence[Sequence[tuple[int, str]]]) -> Score:
    """LAS and UAS over every token, punctuation included."""
    _check_counts(gold, predicted)
    total = las = uas = 0
    for g, p in zip(gold, predicted):
        for tok, (head, label) in zip(g.tokens, p):
            total += 1
            if head == tok.gold_head:
                uas += 1
                if label == tok.gold_label:
                    las += 1
    if total == 0:
        return Score(math.nan, math.nan, 0)
    return Score(las / total, uas / total, total)


def oov_buckets(
    gold: Sequence[Sentence], predicted: Sequence[Sequence[tuple[int, str]]], vocab: Vocabulary
) -> Score:
    """Score with per-bucket LAS counts.

    A token is IV when both its form and its gold head's form occurred in
    training (the root counts as in-vocabulary), OOV otherwise.
    """
    _check_counts(gold, predicted)
    counts = {IV: [0, 0], OOV: [0, 0]}
    for g, p in zip(gold, predicted):
        for tok, (head, label) in zip(g.tokens, p):
            head_iv = tok.gold_head == ROOT_INDEX or vocab.in_vocabulary(
                g.tokens[tok.gold_head - 1].form
            )
            bucket = IV if vocab.in_vocabulary(tok.form) and head_iv else OOV
            counts[bucket][1] += 1
            if head == tok.gold_head and label == tok.gold_label:
                counts[bucket][0] += 1
    overall = score(gold, predicted)
    return Score(overall.las, overall.uas, overall.total, {b: tuple(c) for b, c in counts.items()})


def normalize_pattern(pattern: str) -> str:
    """Accept the six thirds patterns with ``•`` (or ``_``) marking masked thirds."""
    p = _ASCII_PATTERNS.get(pattern, pattern)
    if p not in MASK_PATTERNS:
        raise ValueError(
            f"unknown mask pattern {pattern!r}; choose from {', '.join(MASK_PATTERNS)} "
            f"(or {', '.join(_ASCII_PATTERNS)})"
        )
    return p


def thirds(length: int) -> tuple[range, range, range]:
    """Split positions 0..length-1 into thirds; remainders go to the earlier thirds."""
    first = math.ceil(length / 3)
    last = length - length // 3
    return range(0, first), range(first, last), range(last, length)


def mask_form(form: str, pattern: str) -> str:
    pattern = normalize_pattern(pattern)
    chars = list(form)
    for part, symbol in zip(thirds(len(form)), pattern):
        if symbol == "•":
            for i in part:
                chars[i] = MASK_CHAR
    return "".join(chars)


def mask_corpus(corpus: Sequence[Sentence], pattern: str) -> list[Sentence]:
    """Replace the characters of the masked thirds of every form by the mask character."""
    pattern = normalize_pattern(pattern)
    return [s.with_forms([mask_form(f, pattern) for f in s.forms]) for s in corpus]


def _pct(x: float) -> str:
    return "" if x is None or math.isnan(x) else f"{100 * x:.2f}"


def report(results: Sequence[tuple[str, Score]], sep: str = "\t") -> tuple[str, str]:
    """Aligned text table and delimiter-separated table of scores.

    Values are percentages with two decimals. Delta columns give each run's
    difference from the first run (the baseline); bucket columns appear when
    any score carries IV/OOV counts.
    """
    buckets = any(s.per_bucket for _, s in results)
    header = ["run", "LAS", "UAS", "dLAS"]
    if buckets:
        header += ["IV", "OOV", "dIV", "dOOV"]
    rows = []
    base = results[0][1] if results else None
    for name, s in results:
        row = [name, _pct(s.las), _pct(s.uas), _pct(s.las - base.las)]
        if buckets:
            iv, oov = s.bucket_las(IV), s.bucket_las(OOV)
            row += [
                _pct(iv),
                _pct(oov),
                _pct(iv - base.bucket_las(IV)),
                _pct(oov - base.bucket_las(OOV)),
            ]
        rows.append(row)
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    text = io.StringIO()
    for r in [header, *rows]:
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        text.write("  ".join(cells).rstrip() + "\n")
    table = "".join(sep.join(r) + "\n" for r in [header, *rows])
    return text.getvalue(), table
