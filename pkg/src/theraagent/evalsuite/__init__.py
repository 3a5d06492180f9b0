from .agreement import MedianResult, ccc, correlations, median_agreement, pearson, rank, spearman
from .lexical import bleu, lexical_scores, rouge
from .rubric import (
    AXES,
    GradeResult,
    RubricCriterion,
    axis_scores,
    grade_rubric,
    score_verdicts,
    theme_scores,
)
from .winrate import PairwiseRecord, WinRate, win_rates

__all__ = [
    "AXES", "GradeResult", "MedianResult", "PairwiseRecord", "RubricCriterion", "WinRate",
    "axis_scores", "bleu", "ccc", "correlations", "grade_rubric", "lexical_scores",
    "median_agreement", "pearson", "rank", "rouge", "score_verdicts", "spearman",
    "theme_scores", "win_rates",
]
