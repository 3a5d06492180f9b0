"""Sentence-level BLEU-4 and ROUGE-1/2/L on lowercase whitespace tokens."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

ROUGE_VARIANTS = ("rouge1", "rouge2", "rougeL")


def tokens(text: str) -> list[str]:
    return text.lower().split()


def ngrams(toks: Sequence[str], n: int) -> Counter:
    return Counter(tuple(toks[i:i + n]) for i in range(len(toks) - n + 1))


def bleu(candidate: str, reference: str, max_order: int = 4) -> float:
    """Unsmoothed BLEU with uniform weights and a brevity penalty.

    Orders longer than the candidate have no n-grams to score and are left
    out of the geometric mean, so short identical texts still score 1.0.
    Any scored order with zero matches gives 0.
    """
    cand, ref = tokens(candidate), tokens(reference)
    if not cand or not ref:
        return 0.0
    orders = min(max_order, len(cand))
    log_sum = 0.0
    for n in range(1, orders + 1):
        c, r = ngrams(cand, n), ngrams(ref, n)
        matches = sum(min(cnt, r[g]) for g, cnt in c.items())
        if matches == 0:
            return 0.0
        log_sum += math.log(matches / sum(c.values()))
    bp = 1.0 if len(cand) > len(ref) else math.exp(1 - len(ref) / len(cand))
    return bp * math.exp(log_sum / orders)


def _f1(overlap: float, n_cand: int, n_ref: int) -> float:
    if overlap == 0:
        return 0.0
    p, r = overlap / n_cand, overlap / n_ref
    return 2 * p * r / (p + r)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge(candidate: str, reference: str, variant: str = "rouge1") -> float:
    """ROUGE F1. Texts too short to hold any bigram score 1.0 on rouge2 only if identical."""
    cand, ref = tokens(candidate), tokens(reference)
    if variant == "rougeL":
        if not cand or not ref:
            return 0.0
        return _f1(lcs_length(cand, ref), len(cand), len(ref))
    if variant not in ROUGE_VARIANTS:
        raise ValueError(f"unknown ROUGE variant {variant!r}")
    n = 1 if variant == "rouge1" else 2
    c, r = ngrams(cand, n), ngrams(ref, n)
    if not c and not r:
        return 1.0 if cand and cand == ref else 0.0
    if not c or not r:
        return 0.0
    overlap = sum((c & r).values())
    return _f1(overlap, sum(c.values()), sum(r.values()))


def lexical_scores(candidate: str, reference: str) -> dict[str, float]:
    out = {"bleu": bleu(candidate, reference)}
    for v in ROUGE_VARIANTS:
        out[v] = rouge(candidate, reference, v)
    return out
