"""Agreement statistics between two score series and their median across cases."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Iterable, Sequence

from ..errors import UndefinedCorrelationError, ValidationError


def _check(xs: Sequence[float], ys: Sequence[float]) -> None:
    if len(xs) != len(ys):
        raise ValidationError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise ValidationError("need at least two paired values")


def _moments(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float, float, float, float]:
    """Means, population variances and population covariance."""
    n = len(xs)
    mx, my = math.fsum(xs) / n, math.fsum(ys) / n
    vx = math.fsum((x - mx) ** 2 for x in xs) / n
    vy = math.fsum((y - my) ** 2 for y in ys) / n
    cov = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys)) / n
    return mx, my, vx, vy, cov


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    _check(xs, ys)
    _, _, vx, vy, cov = _moments(xs, ys)
    if vx == 0 or vy == 0:
        raise UndefinedCorrelationError("pearson is undefined for constant input")
    return max(-1.0, min(1.0, cov / math.sqrt(vx * vy)))


def rank(values: Sequence[float]) -> list[float]:
    """1-based ranks; tied values share the mean of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    _check(xs, ys)
    try:
        return pearson(rank(xs), rank(ys))
    except UndefinedCorrelationError:
        raise UndefinedCorrelationError("spearman is undefined for constant input") from None


def ccc(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Lin's concordance correlation coefficient with population moments."""
    _check(xs, ys)
    mx, my, vx, vy, cov = _moments(xs, ys)
    denom = vx + vy + (mx - my) ** 2
    if denom == 0:
        raise UndefinedCorrelationError("ccc is undefined for identical constant input")
    return 2 * cov / denom


@dataclass(frozen=True)
class MedianResult:
    value: float
    used: int
    skipped: int


def median_agreement(values: Iterable[float | None]) -> MedianResult:
    """Median over defined per-case correlations; None and NaN entries are skipped."""
    values = list(values)
    if not values:
        raise ValidationError("no correlations to aggregate")
    kept = [v for v in values if v is not None and not math.isnan(v)]
    if not kept:
        raise UndefinedCorrelationError("every per-case correlation is undefined")
    return MedianResult(statistics.median(kept), len(kept), len(values) - len(kept))


def correlations(xs: Sequence[float], ys: Sequence[float]) -> dict[str, float | None]:
    """All three statistics; an undefined one is reported as None."""
    out: dict[str, float | None] = {}
    for name, fn in (("spearman", spearman), ("pearson", pearson), ("ccc", ccc)):
        try:
            out[name] = fn(xs, ys)
        except UndefinedCorrelationError:
            out[name] = None
    return out
