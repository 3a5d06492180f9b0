import math
import re
import random

import pytest

from conftest import make_backend
from theraagent.core import DIMENSIONS, LoopConfig, PatientCase, TreatmentPlan
from theraagent.errors import ParseError, ValidationError
from theraagent.judge import (
    DIMENSION_INSTRUCTIONS,
    Exemplar,
    aggregate,
    build_judge_prompt,
    evaluate,
    parse_judge_response,
)
from theraagent.retrieval import GuidelineDoc, ingest

CLEAN = ("<reason>ok</reason><dimension_scores>90 80 70 60 50 40 30</dimension_scores>"
         "<overall_score>65</overall_score>")
PLAN = TreatmentPlan(1, "Start nintedanib 150 mg twice daily.")

EXEMPLARS = [
    Exemplar("respiratory", "asthma case", "ICS/LABA", 90),
    Exemplar("neurology", "migraine", "triptan", 70),
    Exemplar("Respiratory", "pneumonia", "amoxicillin", 80),
    Exemplar("respiratory", "copd", "bronchodilator", 60),
    Exemplar("respiratory", "cough", "honey", 30),
]


def test_prompt_minimal_with_dimensions(case):
    cfg = LoopConfig(few_shot_count=0, rag_in_judge=False)
    p = build_judge_prompt(case, PLAN, EXEMPLARS, [], cfg)
    assert p.startswith(DIMENSION_INSTRUCTIONS)
    assert "RAG Context" not in p and "## Example" not in p
    assert "### Treatment Plan to Evaluate:\nStart nintedanib" in p
    for tag in ("<reason>", "<dimension_scores>", "<overall_score>"):
        assert tag in p


def test_prompt_few_shot_department_order(case):
    p = build_judge_prompt(case, PLAN, EXEMPLARS, [], LoopConfig(few_shot_count=3))
    assert len(re.findall(r"(?m)^## Example \d+:$", p)) == 3
    assert p.index("asthma case") < p.index("pneumonia") < p.index("copd")
    assert "migraine" not in p and "honey" not in p
    assert "### Example 2 Score:\n80" in p


def test_prompt_few_shot_uses_what_exists(case):
    p = build_judge_prompt(case, PLAN, EXEMPLARS[:2], [], LoopConfig(few_shot_count=3))
    assert len(re.findall(r"(?m)^## Example \d+:$", p)) == 1


def test_prompt_rag_block(case):
    p = build_judge_prompt(case, PLAN, [], [("a", "guideline one"), ("b", "guideline two")],
                           LoopConfig(rag_in_judge=True, few_shot_count=0))
    assert p.startswith("### RAG Context:\nguideline one\n\nguideline two")


def test_prompt_block_order(case):
    cfg = LoopConfig(rag_in_judge=True, few_shot_count=1)
    p = build_judge_prompt(case, PLAN, EXEMPLARS, [("a", "GUIDE")], cfg)
    marks = ["### RAG Context:", "## Example 1:", "seven dimensions", "### Patient Case Details:",
             "### Treatment Plan to Evaluate:", "Please answer using"]
    pos = [p.index(m) for m in marks]
    assert pos == sorted(pos)


def test_parse_clean():
    r = parse_judge_response(CLEAN)
    assert r == ("ok", [90, 80, 70, 60, 50, 40, 30], 65, "clean")


def test_parse_clamps_overall():
    r = parse_judge_response(CLEAN.replace(">65<", ">105<"))
    assert r.model_overall == 100 and r.status == "repaired"


def test_parse_short_dimensions_discarded():
    r = parse_judge_response(CLEAN.replace("90 80 70 60 50 40 30", "90 80 70 60 50"))
    assert r.dimensions is None and r.model_overall == 65 and r.status == "repaired"


def test_parse_labeled_dimension_lines():
    body = "\n".join(f"{i}. Dim {i}: {s}" for i, s in enumerate([91, 82, 73, 64, 55, 46, 37], 1))
    r = parse_judge_response(f"<reason>r</reason><dimension_scores>{body}</dimension_scores><overall_score>70</overall_score>")
    assert r.dimensions == [91, 82, 73, 64, 55, 46, 37] and r.status == "clean"


def test_parse_enumerated_lines():
    body = "\n".join(f"{i}. {s}" for i, s in enumerate([91, 82, 73, 64, 55, 46, 37], 1))
    r = parse_judge_response(f"<reason>r</reason><dimension_scores>{body}</dimension_scores><overall_score>70</overall_score>")
    assert r.dimensions == [91, 82, 73, 64, 55, 46, 37]


def test_parse_missing_overall_uses_dimension_mean():
    r = parse_judge_response("<reason>x</reason><dimension_scores>10 20 30 40 50 60 70</dimension_scores>")
    assert r.model_overall == 40 and r.status == "repaired"


def test_parse_missing_reason_falls_back_to_prose():
    r = parse_judge_response("Looks fine.<overall_score>70</overall_score>", dimensions_enabled=False)
    assert r.rationale == "Looks fine." and r.status == "repaired"


def test_parse_error_without_any_score():
    with pytest.raises(ParseError):
        parse_judge_response("<reason>no numbers</reason>")
    with pytest.raises(ParseError):
        parse_judge_response("<reason>x</reason><dimension_scores>1 2</dimension_scores>")
    with pytest.raises(ParseError):
        parse_judge_response("<dimension_scores>10 20 30 40 50 60 70</dimension_scores>", dimensions_enabled=False)


def test_parse_dimensions_disabled_ignores_dimension_tag():
    r = parse_judge_response(CLEAN, dimensions_enabled=False)
    assert r.dimensions is None and r.status == "clean"


def test_aggregate_examples():
    assert aggregate([100] * 7, [3, 1, 4, 1, 5, 9, 2]) == 100
    assert aggregate([100, 0, 0, 0, 0, 0, 0], [2, 1, 1, 1, 1, 1, 1]) == 25  # 200 / 8
    assert aggregate([50] * 7, [1] * 7) == 50


def test_aggregate_rejects_zero_weights():
    with pytest.raises(ValidationError):
        aggregate([1] * 7, [0] * 7)


def test_aggregate_bounds_and_scale_invariance():
    rng = random.Random(7)
    for _ in range(2000):
        q = [rng.uniform(0, 100) for _ in range(7)]
        w = [rng.uniform(0, 5) for _ in range(7)]
        a = aggregate(q, w)
        assert min(q) - 1e-9 <= a <= max(q) + 1e-9
        assert math.isclose(a, aggregate(q, [w_i * 3.7 for w_i in w]), abs_tol=1e-9)


def _judge(text):
    return make_backend({("c1", "judge", 1): text})


def test_evaluate_recomputed(case):
    r = evaluate(case, PLAN, LoopConfig(), _judge(CLEAN))
    assert r.aggregate == 60  # mean of 90..30
    assert r.model_overall == 65 and r.parse_status == "clean"
    assert [d.dimension for d in r.dimensions] == list(DIMENSIONS)


def test_evaluate_model_reported(case):
    r = evaluate(case, PLAN, LoopConfig(aggregate_mode="model_reported"), _judge(CLEAN))
    assert r.aggregate == 65


def test_evaluate_vanilla_single_score(case):
    cfg = LoopConfig(dimensions_enabled=False, few_shot_count=0)
    r = evaluate(case, PLAN, cfg, _judge("<reason>fine</reason><overall_score>72</overall_score>"))
    assert r.aggregate == 72 and r.dimensions == () and r.parse_status == "clean"


def test_evaluate_fallback_when_dimensions_dirty(case):
    text = CLEAN.replace("90 80 70 60 50 40 30", "90 80")
    r = evaluate(case, PLAN, LoopConfig(), _judge(text))
    assert r.aggregate == 65 and r.parse_status == "fallback" and r.dimensions == ()


def test_evaluate_weighted(case):
    cfg = LoopConfig(dimension_weights=(2, 1, 1, 1, 1, 1, 1))
    r = evaluate(case, PLAN, cfg, _judge(CLEAN))
    assert r.aggregate == pytest.approx((180 + 80 + 70 + 60 + 50 + 40 + 30) / 8, abs=1e-12)


def test_evaluate_records_rag_docs(case):
    index = ingest([GuidelineDoc("g-cpfe", "CPFE nintedanib therapy"), GuidelineDoc("g-knee", "knee")])
    r = evaluate(case, PLAN, LoopConfig(rag_in_judge=True), _judge(CLEAN), index)
    assert r.retrieved_doc_ids == ("g-cpfe",)


def test_evaluate_dialogue_case():
    c = PatientCase(id="c1", department="endo", dialogue=(("patient", "sugar high"),))
    r = evaluate(c, PLAN, LoopConfig(), _judge(CLEAN))
    assert r.aggregate == 60
