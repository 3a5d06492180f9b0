"""Rubric grading with signed-point criteria and per-axis breakdowns."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from ..backend import Backend, ChatRequest
from ..errors import BackendError, ValidationError

AXES = frozenset({
    "accuracy",
    "completeness",
    "context_awareness",
    "communication_quality",
    "instruction_following",
})


@dataclass(frozen=True)
class RubricCriterion:
    criterion_text: str
    points: float
    axes: frozenset[str] = frozenset()
    theme: str | None = None

    def __post_init__(self) -> None:
        if self.points == 0:
            raise ValidationError("criterion points must be non-zero")
        object.__setattr__(self, "axes", frozenset(self.axes))
        unknown = self.axes - AXES
        if unknown:
            raise ValidationError(f"unknown axes {sorted(unknown)}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RubricCriterion:
        try:
            return cls(
                criterion_text=str(data["criterion_text"]),
                points=float(data["points"]),
                axes=frozenset(data.get("axes") or ()),
                theme=data.get("theme"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad rubric record: {exc}") from None


@dataclass(frozen=True)
class GradeResult:
    met: tuple[bool, ...]
    earned: float
    max_points: float
    normalized: float
    flagged: tuple[bool, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "met": list(self.met),
            "flagged": list(self.flagged),
            "earned": self.earned,
            "max_points": self.max_points,
            "normalized": self.normalized,
        }


def _ratio(earned: float, max_points: float) -> float:
    return min(1.0, max(0.0, earned / max_points))


def score_verdicts(
    criteria: Sequence[RubricCriterion],
    met: Sequence[bool],
    flagged: Sequence[bool] = (),
) -> GradeResult:
    """Earned points over the positive-point maximum, clipped to [0, 1]."""
    if len(met) != len(criteria):
        raise ValidationError("one verdict per criterion required")
    max_points = sum(c.points for c in criteria if c.points > 0)
    if max_points <= 0:
        raise ValidationError("rubric has no positive-point criteria")
    earned = sum(c.points for c, m in zip(criteria, met) if m)
    return GradeResult(tuple(met), earned, max_points, _ratio(earned, max_points),
                       tuple(flagged) or (False,) * len(met))


GRADER_TEMPLATE = """\
You are grading a response against a single rubric criterion.
{conversation}
### Response:
{response}

### Criterion:
{criterion}

Does the response meet the criterion? Answer with exactly one word: YES or NO.
"""

_VERDICT = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


def build_grader_prompt(response: str, criterion: RubricCriterion, conversation: str = "") -> str:
    convo = f"\n### Conversation:\n{conversation}\n" if conversation else ""
    return GRADER_TEMPLATE.format(conversation=convo, response=response,
                                  criterion=criterion.criterion_text)


def parse_verdict(text: str) -> bool | None:
    m = _VERDICT.search(text)
    if m is None:
        return None
    return m.group(1).lower() == "yes"


def grade_rubric(
    response: str,
    criteria: Sequence[RubricCriterion],
    grader: Backend,
    case_id: str = "",
    conversation: str = "",
) -> GradeResult:
    """Ask the grader about each criterion in turn and score the verdicts.

    A reply with no recognizable YES/NO, or a failed grader call, counts
    the criterion as unmet and flags it.
    """
    if sum(c.points for c in criteria if c.points > 0) <= 0:
        raise ValidationError("rubric has no positive-point criteria")
    met, flagged = [], []
    for i, crit in enumerate(criteria, 1):
        request = ChatRequest(
            role_tag="grader",
            user_text=build_grader_prompt(response, crit, conversation),
            case_id=case_id,
            iteration=i,
        )
        try:
            verdict = parse_verdict(grader.complete(request).text)
        except BackendError:
            verdict = None
        met.append(bool(verdict))
        flagged.append(verdict is None)
    return score_verdicts(criteria, met, flagged)


def axis_scores(grade: GradeResult, criteria: Sequence[RubricCriterion]) -> dict[str, float]:
    """Normalized score per axis; axes without positive-point criteria are omitted."""
    out = {}
    for axis in sorted(AXES):
        tagged = [(c, m) for c, m in zip(criteria, grade.met) if axis in c.axes]
        max_points = sum(c.points for c, _ in tagged if c.points > 0)
        if max_points > 0:
            out[axis] = _ratio(sum(c.points for c, m in tagged if m), max_points)
    return out


def theme_scores(grades: Sequence[tuple[GradeResult, str | None]]) -> dict[str, float]:
    """Mean normalized score per theme label over graded cases."""
    buckets: dict[str, list[float]] = {}
    for grade, theme in grades:
        if theme:
            buckets.setdefault(theme, []).append(grade.normalized)
    return {t: sum(v) / len(v) for t, v in sorted(buckets.items())}
