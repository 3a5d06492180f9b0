"""Iterative generate, judge and refine engine for treatment-plan drafting."""

__version__ = "0.1.0"

from .core import (
    DIMENSIONS,
    Dimension,
    DimensionScore,
    JudgeReport,
    LoopConfig,
    MemoryItem,
    MemoryState,
    PatientCase,
    TokenUsage,
    TreatmentPlan,
    validate_case,
)
from .loop import CostLedger, IterationRecord, RunResult, relative_cost, run_batch, run_case, select_output, should_stop

__all__ = [
    "DIMENSIONS", "CostLedger", "Dimension", "DimensionScore", "IterationRecord", "JudgeReport",
    "LoopConfig", "MemoryItem", "MemoryState", "PatientCase", "RunResult", "TokenUsage",
    "TreatmentPlan", "relative_cost", "run_batch", "run_case", "select_output", "should_stop",
    "validate_case",
]
