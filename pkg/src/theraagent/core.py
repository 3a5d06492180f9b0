"""Domain types shared by the planner, judge, memorizer and loop.

All types are frozen dataclasses and serialize to plain JSON-compatible
dicts via ``to_dict`` / ``from_dict``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping, Sequence

from .errors import ValidationError


class Dimension(str, Enum):
    """The seven judged clinical dimensions, in judge-prompt order.

    Parsing of ``<dimension_scores>`` is positional against this order.
    """

    CONSENSUS_COMPLIANCE = "consensus_compliance"
    COMPLETENESS = "completeness"
    SITUATION_TARGETING = "situation_targeting"
    RATIONALE_COHERENCE = "rationale_coherence"
    HARM_CONTROL = "harm_control"
    INFORMATION_ACCURACY = "information_accuracy"
    CONTENT_BIAS = "content_bias"


DIMENSIONS: tuple[Dimension, ...] = tuple(Dimension)
N_DIMENSIONS = len(DIMENSIONS)

MEMORY_POLICIES = ("none", "all", "nearest_n", "best_n")
AGGREGATE_MODES = ("recomputed", "model_reported")
PARSE_STATUSES = ("clean", "repaired", "fallback")


def _check_score(value: float, what: str) -> float:
    value = float(value)
    if not math.isfinite(value) or not 0.0 <= value <= 100.0:
        raise ValidationError(f"{what} must lie in [0, 100], got {value!r}")
    return value


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    wall_time_ms: int = 0

    def __post_init__(self) -> None:
        for name in ("prompt_tokens", "completion_tokens", "wall_time_ms"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def __add__(self, other: TokenUsage) -> TokenUsage:
        return TokenUsage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
            self.wall_time_ms + other.wall_time_ms,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "wall_time_ms": self.wall_time_ms,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TokenUsage:
        return cls(
            int(data.get("prompt_tokens", 0)),
            int(data.get("completion_tokens", 0)),
            int(data.get("wall_time_ms", 0)),
        )


@dataclass(frozen=True)
class PatientCase:
    """A case to plan for: clinical info, findings, diagnosis and/or dialogue."""

    id: str
    department: str = ""
    clinical_info: str = ""
    findings: str = ""
    diagnosis: str = ""
    dialogue: tuple[tuple[str, str], ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "department": self.department,
            "clinical_info": self.clinical_info,
            "findings": self.findings,
            "diagnosis": self.diagnosis,
            "dialogue": [{"speaker": s, "text": t} for s, t in self.dialogue],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> PatientCase:
        if not isinstance(data, Mapping):
            raise ValidationError("case record must be a JSON object")
        turns = []
        for turn in data.get("dialogue") or ():
            if not isinstance(turn, Mapping) or "text" not in turn:
                raise ValidationError("dialogue turns need 'speaker' and 'text'")
            turns.append((str(turn.get("speaker", "")), str(turn["text"])))
        return cls(
            id=str(data.get("id", "")),
            department=str(data.get("department") or ""),
            clinical_info=str(data.get("clinical_info") or ""),
            findings=str(data.get("findings") or ""),
            diagnosis=str(data.get("diagnosis") or ""),
            dialogue=tuple(turns),
        )


def validate_case(case: PatientCase) -> PatientCase:
    """Return ``case`` unchanged if it is well formed, else raise."""
    if not case.id or not case.id.strip():
        raise ValidationError("empty id")
    if not case.diagnosis.strip() and not case.dialogue:
        raise ValidationError(f"case {case.id!r}: needs a diagnosis or dialogue")
    return case


def validate_batch(cases: Sequence[PatientCase]) -> list[PatientCase]:
    seen: set[str] = set()
    for case in cases:
        validate_case(case)
        if case.id in seen:
            raise ValidationError(f"duplicate case id {case.id!r}")
        seen.add(case.id)
    return list(cases)


@dataclass(frozen=True)
class TreatmentPlan:
    iteration: int
    text: str
    reasoning: str = ""
    backend_id: str = ""
    usage: TokenUsage = field(default_factory=TokenUsage)
    parse_status: str = "clean"

    def __post_init__(self) -> None:
        if self.iteration < 1:
            raise ValidationError("plan iteration must be >= 1")
        if not self.text.strip():
            raise ValidationError("plan text is empty")
        if self.parse_status not in PARSE_STATUSES:
            raise ValidationError(f"unknown parse status {self.parse_status!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "text": self.text,
            "reasoning": self.reasoning,
            "backend_id": self.backend_id,
            "usage": self.usage.to_dict(),
            "parse_status": self.parse_status,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TreatmentPlan:
        return cls(
            iteration=int(data["iteration"]),
            text=data["text"],
            reasoning=data.get("reasoning", ""),
            backend_id=data.get("backend_id", ""),
            usage=TokenUsage.from_dict(data.get("usage", {})),
            parse_status=data.get("parse_status", "clean"),
        )


@dataclass(frozen=True)
class DimensionScore:
    dimension: Dimension
    value: float

    def __post_init__(self) -> None:
        # Dimension(...) rejects anything outside the closed set.
        object.__setattr__(self, "dimension", Dimension(self.dimension))
        object.__setattr__(self, "value", _check_score(self.value, self.dimension.value))

    def to_dict(self) -> dict[str, Any]:
        return {"dimension": self.dimension.value, "value": self.value}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> DimensionScore:
        try:
            dim = Dimension(data["dimension"])
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
        return cls(dim, data["value"])


@dataclass(frozen=True)
class JudgeReport:
    rationale: str
    dimensions: tuple[DimensionScore, ...]
    model_overall: float
    aggregate: float
    retrieved_doc_ids: tuple[str, ...] = ()
    parse_status: str = "clean"
    backend_id: str = ""
    usage: TokenUsage = field(default_factory=TokenUsage)

    def __post_init__(self) -> None:
        _check_score(self.model_overall, "model_overall")
        _check_score(self.aggregate, "aggregate")
        dims = [d.dimension for d in self.dimensions]
        if len(set(dims)) != len(dims):
            raise ValidationError("dimension listed twice in one report")
        if self.parse_status not in PARSE_STATUSES:
            raise ValidationError(f"unknown parse status {self.parse_status!r}")

    def dimension_values(self) -> list[float]:
        return [d.value for d in self.dimensions]

    def to_dict(self) -> dict[str, Any]:
        return {
            "rationale": self.rationale,
            "dimensions": [d.to_dict() for d in self.dimensions],
            "model_overall": self.model_overall,
            "aggregate": self.aggregate,
            "retrieved_doc_ids": list(self.retrieved_doc_ids),
            "parse_status": self.parse_status,
            "backend_id": self.backend_id,
            "usage": self.usage.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> JudgeReport:
        return cls(
            rationale=data.get("rationale", ""),
            dimensions=tuple(DimensionScore.from_dict(d) for d in data.get("dimensions", ())),
            model_overall=float(data["model_overall"]),
            aggregate=float(data["aggregate"]),
            retrieved_doc_ids=tuple(data.get("retrieved_doc_ids", ())),
            parse_status=data.get("parse_status", "clean"),
            backend_id=data.get("backend_id", ""),
            usage=TokenUsage.from_dict(data.get("usage", {})),
        )


@dataclass(frozen=True)
class MemoryItem:
    plan: TreatmentPlan
    report: JudgeReport

    @property
    def iteration(self) -> int:
        return self.plan.iteration

    @property
    def score(self) -> float:
        return self.report.aggregate

    def to_dict(self) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "plan": self.plan.to_dict(),
            "report": self.report.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> MemoryItem:
        item = cls(TreatmentPlan.from_dict(data["plan"]), JudgeReport.from_dict(data["report"]))
        if "iteration" in data and int(data["iteration"]) != item.iteration:
            raise ValidationError("memory item iteration disagrees with its plan")
        return item


@dataclass(frozen=True)
class MemoryState:
    """Append-only history of one case run. Use :func:`memorizer.append`."""

    items: tuple[MemoryItem, ...] = ()

    def __post_init__(self) -> None:
        its = [m.iteration for m in self.items]
        if any(b <= a for a, b in zip(its, its[1:])):
            raise ValidationError("memory iterations must be strictly increasing")

    def __len__(self) -> int:
        return len(self.items)

    def to_dict(self) -> dict[str, Any]:
        return {"items": [m.to_dict() for m in self.items]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> MemoryState:
        return cls(tuple(MemoryItem.from_dict(m) for m in data.get("items", ())))


@dataclass(frozen=True)
class LoopConfig:
    """Loop, memory and judge settings. Defaults are the published setup."""

    tau: float = 98.0
    max_iterations: int = 10
    output_window: int = 3
    memory_policy: str = "best_n"
    memory_n: int = 3
    few_shot_count: int = 3
    rag_in_planner: bool = False
    rag_in_judge: bool = False
    rag_top_k: int = 3
    dimensions_enabled: bool = True
    dimension_weights: tuple[float, ...] = (1.0,) * N_DIMENSIONS
    aggregate_mode: str = "recomputed"

    def __post_init__(self) -> None:
        object.__setattr__(self, "dimension_weights", tuple(float(w) for w in self.dimension_weights))
        _check_score(self.tau, "tau")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if not 1 <= self.output_window <= self.max_iterations:
            raise ValidationError("output_window must be in [1, max_iterations]")
        if self.memory_policy not in MEMORY_POLICIES:
            raise ValidationError(f"memory_policy must be one of {MEMORY_POLICIES}")
        if self.memory_n < 1:
            raise ValidationError("memory_n must be >= 1")
        if self.few_shot_count < 0:
            raise ValidationError("few_shot_count must be >= 0")
        if self.rag_top_k < 1:
            raise ValidationError("rag_top_k must be >= 1")
        if self.aggregate_mode not in AGGREGATE_MODES:
            raise ValidationError(f"aggregate_mode must be one of {AGGREGATE_MODES}")
        w = self.dimension_weights
        if len(w) != N_DIMENSIONS:
            raise ValidationError(f"dimension_weights needs {N_DIMENSIONS} values")
        if any(x < 0 or not math.isfinite(x) for x in w):
            raise ValidationError("dimension_weights must be finite and non-negative")
        if self.aggregate_mode == "recomputed" and not any(w):
            raise ValidationError("dimension_weights are all zero")

    def with_overrides(self, **changes: Any) -> LoopConfig:
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    def to_dict(self) -> dict[str, Any]:
        return {
            "tau": self.tau,
            "max_iterations": self.max_iterations,
            "output_window": self.output_window,
            "memory_policy": self.memory_policy,
            "memory_n": self.memory_n,
            "few_shot_count": self.few_shot_count,
            "rag_in_planner": self.rag_in_planner,
            "rag_in_judge": self.rag_in_judge,
            "rag_top_k": self.rag_top_k,
            "dimensions_enabled": self.dimensions_enabled,
            "dimension_weights": list(self.dimension_weights),
            "aggregate_mode": self.aggregate_mode,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> LoopConfig:
        known = cls().to_dict().keys()
        unknown = set(data) - set(known)
        if unknown:
            raise ValidationError(f"unknown loop config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "dimension_weights" in kwargs:
            weights = kwargs["dimension_weights"]
            if isinstance(weights, Mapping):
                # Named form: {consensus_compliance: 2, ...}; unnamed default to 1.
                bad = set(weights) - {d.value for d in DIMENSIONS}
                if bad:
                    raise ValidationError(f"unknown dimensions in weights: {sorted(bad)}")
                weights = [float(weights.get(d.value, 1.0)) for d in DIMENSIONS]
            kwargs["dimension_weights"] = tuple(weights)
        return cls(**kwargs)
