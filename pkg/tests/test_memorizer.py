import pytest
from hypothesis import given
from hypothesis import strategies as st

from theraagent.core import JudgeReport, MemoryItem, MemoryState, TreatmentPlan
from theraagent.errors import ValidationError
from theraagent.memorizer import append, retrieve


def item(k, score):
    return MemoryItem(TreatmentPlan(k, f"plan {k}"), JudgeReport(f"r{k}", (), score, score))


def state_of(scores):
    s = MemoryState()
    for k, sc in enumerate(scores, 1):
        s = append(s, item(k, sc))
    return s


def test_append():
    s1 = append(MemoryState(), item(1, 50))
    assert [m.iteration for m in s1.items] == [1]
    s2 = append(s1, item(2, 60))
    assert [m.iteration for m in s2.items] == [1, 2]
    assert len(s1) == 1


def test_append_rejects_non_increasing():
    with pytest.raises(ValidationError):
        append(state_of([50, 60]), item(2, 70))


def test_best_n_tie_prefers_later():
    s = state_of([80, 92, 70, 92])
    assert [m.iteration for m in retrieve(s, "best_n", 3)] == [4, 2, 1]


def test_nearest_n():
    assert [m.iteration for m in retrieve(state_of([80, 92, 70, 92]), "nearest_n", 3)] == [2, 3, 4]


def test_none_and_all():
    s = state_of([80, 92, 70, 92])
    assert retrieve(s, "none", 3) == []
    assert [m.iteration for m in retrieve(s, "all", 1)] == [1, 2, 3, 4]


@given(st.lists(st.integers(0, 100), max_size=12), st.integers(1, 6))
def test_retrieve_is_read_only_and_bounded(scores, n):
    s = state_of(scores)
    before = s.items
    for policy in ("none", "all", "nearest_n", "best_n"):
        out = retrieve(s, policy, n)
        assert all(m in s.items for m in out)
        if policy in ("nearest_n", "best_n"):
            assert len(out) <= min(n, len(s))
    assert s.items == before
