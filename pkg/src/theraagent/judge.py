"""Judge: evaluation prompt, score parsing and weighted aggregation."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, NamedTuple, Sequence

from .backend import Backend, ChatRequest
from .core import (
    DIMENSIONS,
    N_DIMENSIONS,
    DimensionScore,
    JudgeReport,
    LoopConfig,
    PatientCase,
    TreatmentPlan,
)
from .errors import ParseError, ValidationError
from .prompts import extract_tag, format_score, render_case, strip_tags
from .retrieval import RetrievalIndex, case_query, retrieve_context


@dataclass(frozen=True)
class Exemplar:
    """An expert-scored case/plan pair used as a few-shot calibration example."""

    department: str
    case_text: str
    plan_text: str
    score: float

    def __post_init__(self) -> None:
        if not 0.0 <= float(self.score) <= 100.0:
            raise ValidationError(f"exemplar score {self.score!r} outside [0, 100]")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Exemplar:
        try:
            return cls(str(data["department"]), str(data["case_text"]),
                       str(data["plan_text"]), float(data["score"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad exemplar record: {exc}") from None


def load_exemplars(path: str | Path) -> list[Exemplar]:
    from .io import read_jsonl

    return [Exemplar.from_dict(r) for r in read_jsonl(path)]


def select_exemplars(exemplars: Sequence[Exemplar], department: str, count: int) -> list[Exemplar]:
    dept = department.strip().lower()
    return [e for e in exemplars if e.department.strip().lower() == dept][:count]


DIMENSION_INSTRUCTIONS = """\
Please evaluate the treatment plan from the following seven dimensions and give a score from 0 to 100:
1. Scientific Consensus Compliance (To what extent is the treatment plan consistent with established scientific and clinical consensus?)
2. Plan Completeness (To what extent does the plan comprehensively address all necessary components without omission?)
3. Situation Targeting (To what extent does the plan accurately reflect and address the patient's specific condition?)
4. Rationale-Measure Coherence (To what extent is the reasoning behind the treatment plan logically connected to the proposed measures?)
5. Harm Potential (What is the extent and likelihood of potential harm to the patient?)
6. Information Accuracy & Relevance (To what extent does the plan contain inaccurate or irrelevant information?)
7. Bias in Medical Content (To what extent does the plan exhibit bias or inapplicability to specific patient demographics?)"""

ANSWER_FORMAT = """\
Please answer using the following format:
<reason>[detailed explanation]</reason>
<dimension_scores>[all dimension scores from 0 to 100]</dimension_scores>
<overall_score>[overall score number from 0 to 100]</overall_score>"""


def build_judge_prompt(
    case: PatientCase,
    plan: TreatmentPlan | str,
    exemplars: Sequence[Exemplar],
    rag_context: Sequence[tuple[str, str]],
    config: LoopConfig,
) -> str:
    plan_text = plan.text if isinstance(plan, TreatmentPlan) else plan
    blocks = []
    if config.rag_in_judge and rag_context:
        blocks.append("### RAG Context:\n" + "\n\n".join(body for _, body in rag_context))
    if config.few_shot_count > 0:
        for i, ex in enumerate(select_exemplars(exemplars, case.department, config.few_shot_count), 1):
            blocks.append(
                f"## Example {i}:\n"
                f"### Example {i} Case Details:\n{ex.case_text}\n\n"
                f"### Example {i} Treatment Plan:\n{ex.plan_text}\n\n"
                f"### Example {i} Score:\n{format_score(ex.score)}"
            )
    if config.dimensions_enabled:
        blocks.append(DIMENSION_INSTRUCTIONS)
    blocks.append(f"### Patient Case Details:\n{render_case(case)}")
    blocks.append(f"### Treatment Plan to Evaluate:\n{plan_text}")
    blocks.append(ANSWER_FORMAT)
    return "\n\n".join(blocks) + "\n"


class JudgeParse(NamedTuple):
    rationale: str
    dimensions: list[float] | None
    model_overall: float
    status: str


_NUMBER = r"-?\d+(?:\.\d+)?"
_LABELED_NUMBER = re.compile(rf"[:=]\s*({_NUMBER})")
_ENUMERATOR = re.compile(r"(?m)^\s*\d+[.)]\s+")


def _clamp(value: float) -> tuple[float, bool]:
    clamped = min(100.0, max(0.0, value))
    return clamped, clamped != value


def _dimension_numbers(content: str) -> list[float]:
    # "Label: 90" lines carry list indices that must not be read as scores.
    labeled = _LABELED_NUMBER.findall(content)
    if len(labeled) >= N_DIMENSIONS:
        return [float(x) for x in labeled]
    return [float(x) for x in re.findall(_NUMBER, _ENUMERATOR.sub(" ", content))]


def parse_judge_response(text: str, dimensions_enabled: bool = True) -> JudgeParse:
    """Extract rationale, the seven dimension scores and the overall score.

    Incomplete output is repaired where possible: a missing ``<reason>``
    falls back to the untagged text, a short ``<dimension_scores>`` is
    discarded, a missing overall is replaced by the mean dimension score,
    and out-of-range numbers are clamped to [0, 100].

    Raises:
        ParseError: if neither an overall score nor usable dimension scores
            can be recovered.
    """
    repaired = False

    reason = extract_tag(text, "reason")
    if reason is None:
        rationale = strip_tags(text, "dimension_scores", "overall_score")
        repaired = True
    else:
        rationale = reason.content
        repaired |= not reason.closed

    dims: list[float] | None = None
    if dimensions_enabled:
        tag = extract_tag(text, "dimension_scores")
        numbers = _dimension_numbers(tag.content) if tag else []
        if tag is None or not tag.closed or len(numbers) != N_DIMENSIONS:
            repaired = True
        if len(numbers) >= N_DIMENSIONS:
            dims = []
            for x in numbers[:N_DIMENSIONS]:
                v, was_clamped = _clamp(x)
                repaired |= was_clamped
                dims.append(v)

    overall: float | None = None
    tag = extract_tag(text, "overall_score")
    if tag is not None:
        m = re.search(_NUMBER, tag.content)
        if m:
            overall, was_clamped = _clamp(float(m.group()))
            repaired |= was_clamped or not tag.closed
    if overall is None:
        if dims is None:
            raise ParseError("judge reply has no overall score and no usable dimension scores")
        overall = math.fsum(dims) / len(dims)
        repaired = True

    return JudgeParse(rationale, dims, overall, "repaired" if repaired else "clean")


def aggregate(values: Sequence[float], weights: Sequence[float]) -> float:
    """Weighted mean of dimension scores; stays on the 0-100 scale."""
    if len(values) != len(weights):
        raise ValidationError("values and weights differ in length")
    if any(w < 0 for w in weights):
        raise ValidationError("weights must be non-negative")
    total = math.fsum(weights)
    if total <= 0:
        raise ValidationError("weights are all zero")
    return math.fsum(w * q for w, q in zip(weights, values)) / total


def evaluate(
    case: PatientCase,
    plan: TreatmentPlan,
    config: LoopConfig,
    backend: Backend,
    index: RetrievalIndex | None = None,
    exemplars: Sequence[Exemplar] = (),
    temperature: float = 0.0,
) -> JudgeReport:
    if not plan.text.strip():
        raise ValidationError("cannot judge an empty plan")
    rag: list[tuple[str, str]] = []
    if config.rag_in_judge:
        rag = retrieve_context(index, case_query(case.diagnosis, case.findings, plan.text), config.rag_top_k)
    prompt = build_judge_prompt(case, plan, exemplars, rag, config)
    response = backend.complete(
        ChatRequest(
            role_tag="judge",
            user_text=prompt,
            temperature=temperature,
            case_id=case.id,
            iteration=plan.iteration,
        )
    )
    parsed = parse_judge_response(response.text, config.dimensions_enabled)

    status = parsed.status
    dims = parsed.dimensions
    if config.aggregate_mode == "recomputed" and dims is not None:
        # Rounding can push a weighted mean of 100s a hair past 100.
        score = min(100.0, max(0.0, aggregate(dims, config.dimension_weights)))
    else:
        score = parsed.model_overall
        if config.aggregate_mode == "recomputed" and config.dimensions_enabled:
            status = "fallback"

    return JudgeReport(
        rationale=parsed.rationale,
        dimensions=tuple(DimensionScore(d, v) for d, v in zip(DIMENSIONS, dims or ())),
        model_overall=parsed.model_overall,
        aggregate=score,
        retrieved_doc_ids=tuple(doc_id for doc_id, _ in rag),
        parse_status=status,
        backend_id=response.backend_id,
        usage=response.usage,
    )
