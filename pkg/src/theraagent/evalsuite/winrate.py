"""Pairwise preference records and per-dimension win/tie/loss rates."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable

from ..errors import ValidationError

VERDICTS = ("A", "B", "tie")


@dataclass(frozen=True)
class PairwiseRecord:
    case_id: str
    dimension: str
    verdict: str

    def __post_init__(self) -> None:
        if self.verdict not in VERDICTS:
            raise ValidationError(f"verdict must be one of {VERDICTS}, got {self.verdict!r}")


@dataclass(frozen=True)
class WinRate:
    """Fractions from system A's side: A preferred, tie, B preferred."""

    win: float
    tie: float
    loss: float
    n: int


def win_rates(records: Iterable[PairwiseRecord]) -> dict[str, WinRate]:
    counts: dict[str, Counter] = {}
    for rec in records:
        counts.setdefault(rec.dimension, Counter())[rec.verdict] += 1
    out = {}
    for dim in sorted(counts):
        c = counts[dim]
        n = sum(c.values())
        out[dim] = WinRate(c["A"] / n, c["tie"] / n, c["B"] / n, n)
    return out
