"""Per-case memory of past plans and their judge reports."""

from __future__ import annotations

from .core import MEMORY_POLICIES, MemoryItem, MemoryState
from .errors import ValidationError


def append(state: MemoryState, item: MemoryItem) -> MemoryState:
    """Return a new state with ``item`` appended; ``state`` is left untouched."""
    if state.items and item.iteration <= state.items[-1].iteration:
        raise ValidationError(
            f"memory append out of order: iteration {item.iteration} after {state.items[-1].iteration}"
        )
    return MemoryState(state.items + (item,))


def retrieve(state: MemoryState, policy: str, n: int = 3) -> list[MemoryItem]:
    """Select the memory items shown to the planner.

    ``none`` returns nothing, ``all`` the whole history, ``nearest_n`` the
    ``n`` most recent items (oldest first) and ``best_n`` the ``n`` highest
    scoring items, best first, with equal scores ordered latest first.
    """
    if policy not in MEMORY_POLICIES:
        raise ValidationError(f"unknown memory policy {policy!r}")
    if policy == "none":
        return []
    if policy == "all":
        return list(state.items)
    if n < 1:
        raise ValidationError("n must be >= 1")
    if policy == "nearest_n":
        return list(state.items[-n:])
    ranked = sorted(state.items, key=lambda m: (m.score, m.iteration), reverse=True)
    return ranked[:n]
