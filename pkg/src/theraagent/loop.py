"""Generate, judge, memorize: the per-case refinement loop and batch runner."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from . import memorizer
from .backend import Backend
from .core import (
    JudgeReport,
    LoopConfig,
    MemoryItem,
    MemoryState,
    PatientCase,
    TokenUsage,
    TreatmentPlan,
    validate_case,
)
from .errors import TheraError, ValidationError
from .judge import Exemplar, evaluate
from .planner import generate_plan
from .retrieval import RetrievalIndex

logger = logging.getLogger(__name__)

EARLY_STOP_RUN = 3
STOP_REASONS = ("early_stop", "max_iterations", "error")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    plan: TreatmentPlan
    report: JudgeReport
    memory_used: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.iteration != self.plan.iteration:
            raise ValidationError("record iteration disagrees with its plan")

    @property
    def score(self) -> float:
        return self.report.aggregate

    @property
    def planner_usage(self) -> TokenUsage:
        return self.plan.usage

    @property
    def judge_usage(self) -> TokenUsage:
        return self.report.usage

    def to_dict(self) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "plan": self.plan.to_dict(),
            "report": self.report.to_dict(),
            "planner_usage": self.planner_usage.to_dict(),
            "judge_usage": self.judge_usage.to_dict(),
            "memory_used": list(self.memory_used),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> IterationRecord:
        return cls(
            iteration=int(data["iteration"]),
            plan=TreatmentPlan.from_dict(data["plan"]),
            report=JudgeReport.from_dict(data["report"]),
            memory_used=tuple(data.get("memory_used", ())),
        )


@dataclass(frozen=True)
class RoleCost:
    calls: int = 0
    usage: TokenUsage = field(default_factory=TokenUsage)

    def add(self, usage: TokenUsage) -> RoleCost:
        return RoleCost(self.calls + 1, self.usage + usage)

    def to_dict(self) -> dict[str, Any]:
        return {"calls": self.calls, **self.usage.to_dict()}


@dataclass(frozen=True)
class CostLedger:
    """Backend calls and tokens for one run, split by role."""

    planner: RoleCost = field(default_factory=RoleCost)
    judge: RoleCost = field(default_factory=RoleCost)

    @property
    def calls(self) -> int:
        return self.planner.calls + self.judge.calls

    @property
    def tokens(self) -> TokenUsage:
        return self.planner.usage + self.judge.usage

    @property
    def wall_time_ms(self) -> int:
        return self.tokens.wall_time_ms

    def charge(self, role: str, usage: TokenUsage) -> CostLedger:
        if role == "planner":
            return CostLedger(self.planner.add(usage), self.judge)
        if role == "judge":
            return CostLedger(self.planner, self.judge.add(usage))
        raise ValidationError(f"unknown role {role!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "calls": self.calls,
            **self.tokens.to_dict(),
            "total_tokens": self.tokens.total_tokens,
            "per_role": {"planner": self.planner.to_dict(), "judge": self.judge.to_dict()},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> CostLedger:
        roles = data.get("per_role", {})

        def role(name: str) -> RoleCost:
            r = roles.get(name, {})
            return RoleCost(int(r.get("calls", 0)), TokenUsage.from_dict(r))

        return cls(role("planner"), role("judge"))


@dataclass(frozen=True)
class RunResult:
    case_id: str
    records: tuple[IterationRecord, ...]
    selected: TreatmentPlan | None
    selected_iteration: int | None
    stop_reason: str
    ledger: CostLedger
    error: str | None = None

    @property
    def scores(self) -> list[float]:
        return [r.score for r in self.records]

    def summary(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "iterations": len(self.records),
            "scores": self.scores,
            "selected_iteration": self.selected_iteration,
            "selected_score": (self.records[self.selected_iteration - 1].score
                               if self.selected_iteration else None),
            "stop_reason": self.stop_reason,
            "error": self.error,
            "ledger": self.ledger.to_dict(),
        }

    def transcript_lines(self) -> list[dict[str, Any]]:
        """One line per iteration plus a trailing result line."""
        lines: list[dict[str, Any]] = [
            {"type": "iteration", "case_id": self.case_id, **r.to_dict()} for r in self.records
        ]
        lines.append({
            "type": "result",
            **self.summary(),
            "selected": self.selected.to_dict() if self.selected else None,
        })
        return lines


def should_stop(scores: Sequence[float], tau: float) -> bool:
    """True once the last three scores all reach ``tau``."""
    if len(scores) < EARLY_STOP_RUN:
        return False
    return all(s >= tau for s in scores[-EARLY_STOP_RUN:])


def select_output(records: Sequence[IterationRecord], window: int) -> tuple[TreatmentPlan, int]:
    """Best-scoring plan among the last ``window`` records; ties go to the later one."""
    if not records:
        raise ValidationError("no records to select from")
    if window < 1:
        raise ValidationError("window must be >= 1")
    best = None
    for rec in records[-window:]:
        if best is None or rec.score >= best.score:
            best = rec
    assert best is not None
    return best.plan, best.iteration


def run_case(
    case: PatientCase,
    config: LoopConfig,
    planner: Backend,
    judge: Backend | None = None,
    index: RetrievalIndex | None = None,
    exemplars: Sequence[Exemplar] = (),
    temperature: float = 0.0,
) -> RunResult:
    """Run the refinement loop on one case.

    Errors inside an iteration end the run with ``stop_reason="error"``;
    records completed before the failure are kept.
    """
    judge = judge or planner
    state = MemoryState()
    records: list[IterationRecord] = []
    ledger = CostLedger()
    stop_reason = "max_iterations"
    error = None

    try:
        validate_case(case)
    except ValidationError as exc:
        return RunResult(case.id, (), None, None, "error", ledger, str(exc))

    for k in range(1, config.max_iterations + 1):
        stage = "planner"
        try:
            used = memorizer.retrieve(state, config.memory_policy, config.memory_n)
            plan = generate_plan(case, state, config, planner, index, k, temperature)
            ledger = ledger.charge("planner", plan.usage)
            stage = "judge"
            report = evaluate(case, plan, config, judge, index, exemplars, temperature)
            ledger = ledger.charge("judge", report.usage)
        except TheraError as exc:
            error = f"iteration {k} ({stage}): {type(exc).__name__}: {exc}"
            logger.warning("case %s: %s", case.id, error)
            stop_reason = "error"
            break
        state = memorizer.append(state, MemoryItem(plan, report))
        records.append(IterationRecord(k, plan, report, tuple(m.iteration for m in used)))
        logger.debug("case %s iteration %d score %.2f", case.id, k, report.aggregate)
        if should_stop([r.score for r in records], config.tau):
            stop_reason = "early_stop"
            break

    selected, selected_iteration = (None, None)
    if records:
        selected, selected_iteration = select_output(records, config.output_window)
    return RunResult(case.id, tuple(records), selected, selected_iteration, stop_reason, ledger, error)


def run_batch(
    cases: Sequence[PatientCase],
    config: LoopConfig,
    planner: Backend,
    judge: Backend | None = None,
    index: RetrievalIndex | None = None,
    exemplars: Sequence[Exemplar] = (),
    concurrency: int = 1,
    temperature: float = 0.0,
) -> list[RunResult]:
    """Run every case with at most ``concurrency`` in flight; results keep input order."""
    if concurrency < 1:
        raise ValidationError("concurrency must be >= 1")

    def one(case: PatientCase) -> RunResult:
        try:
            return run_case(case, config, planner, judge, index, exemplars, temperature)
        except Exception as exc:  # isolate anything unexpected to its case
            logger.exception("case %s crashed", case.id)
            return RunResult(case.id, (), None, None, "error", CostLedger(), f"{type(exc).__name__}: {exc}")

    if concurrency == 1:
        return [one(c) for c in cases]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        return list(pool.map(one, cases))


def _ledger_cost(ledger: CostLedger, price: float | Mapping[str, float]) -> float:
    if isinstance(price, Mapping):
        return (ledger.planner.usage.total_tokens * float(price.get("planner", 0.0))
                + ledger.judge.usage.total_tokens * float(price.get("judge", 0.0)))
    return ledger.tokens.total_tokens * float(price)


def relative_cost(
    ledger: CostLedger,
    price_table: float | Mapping[str, float],
    reference_ledger: CostLedger,
    reference_price: float,
) -> float:
    """Token spend of ``ledger`` relative to a single-pass reference.

    ``price_table`` is a per-token price, either one number or per role.
    """
    ref = _ledger_cost(reference_ledger, reference_price)
    if ref <= 0:
        raise ValidationError("reference cost is zero")
    return _ledger_cost(ledger, price_table) / ref
