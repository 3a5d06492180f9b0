"""Planner: prompt assembly, generation call and tagged-output parsing."""

from __future__ import annotations

from typing import Sequence

from . import memorizer
from .backend import Backend, ChatRequest
from .core import LoopConfig, MemoryItem, MemoryState, PatientCase, TreatmentPlan
from .errors import GenerationError
from .prompts import extract_tag, format_score, render_case, strip_tags
from .retrieval import RetrievalIndex, case_query, retrieve_context

DEFAULT_DEPARTMENT = "internal medicine"

_OUTPUT_FORMAT = (
    "## Output format:\n"
    "<thinking>The reasoning process</thinking>\n"
    "<answer>The treatment plan</answer>"
)


def build_planner_prompt(
    case: PatientCase,
    memory: Sequence[MemoryItem],
    rag_context: Sequence[tuple[str, str]] = (),
    department: str | None = None,
) -> str:
    department = department or case.department or DEFAULT_DEPARTMENT
    blocks = [f"## Patient Case Details:\n{render_case(case)}"]
    for i, item in enumerate(memory, 1):
        blocks.append(f"### Old treatment plan {i}:\n{item.plan.text}")
        blocks.append(f"### Reflection to the old treatment plan {i}:\n{item.report.rationale}")
        blocks.append(f"### Score of the old treatment plan {i}:\n{format_score(item.score)}")
    if rag_context:
        blocks.append("### RAG Context:\n" + "\n\n".join(body for _, body in rag_context))
    blocks.append(
        "## Task:\n"
        f"You are an expert in {department}. Please think step by step to give a treatment "
        "plan for the patient accurately based on the above information."
    )
    blocks.append(_OUTPUT_FORMAT)
    return "\n\n".join(blocks) + "\n"


def parse_planner_response(text: str) -> tuple[str, str, str]:
    """Split a planner reply into (plan text, reasoning, parse status).

    Raises:
        GenerationError: when no usable plan text remains.
    """
    thinking = extract_tag(text, "thinking")
    answer = extract_tag(text, "answer")
    reasoning = thinking.content if thinking else ""
    if answer is not None:
        if not answer.content:
            raise GenerationError("planner returned an empty <answer>")
        clean = answer.closed and thinking is not None and thinking.closed
        return answer.content, reasoning, "clean" if clean else "repaired"
    plan = strip_tags(text, "thinking")
    if not plan:
        raise GenerationError("planner returned no plan text")
    return plan, reasoning, "repaired"


def generate_plan(
    case: PatientCase,
    memory_state: MemoryState,
    config: LoopConfig,
    backend: Backend,
    index: RetrievalIndex | None,
    iteration: int,
    temperature: float = 0.0,
) -> TreatmentPlan:
    memory = memorizer.retrieve(memory_state, config.memory_policy, config.memory_n)
    rag = []
    if config.rag_in_planner:
        rag = retrieve_context(index, case_query(case.diagnosis, case.findings), config.rag_top_k)
    prompt = build_planner_prompt(case, memory, rag)
    response = backend.complete(
        ChatRequest(
            role_tag="planner",
            user_text=prompt,
            temperature=temperature,
            case_id=case.id,
            iteration=iteration,
        )
    )
    text, reasoning, status = parse_planner_response(response.text)
    return TreatmentPlan(
        iteration=iteration,
        text=text,
        reasoning=reasoning,
        backend_id=response.backend_id,
        usage=response.usage,
        parse_status=status,
    )
