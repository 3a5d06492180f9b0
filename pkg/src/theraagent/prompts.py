"""Case rendering and tolerant tag extraction shared by planner and judge."""

from __future__ import annotations

import re
from typing import NamedTuple

from .core import PatientCase


def render_case(case: PatientCase) -> str:
    """Labeled case sections in fixed order; empty sections are skipped."""
    parts = []
    if case.clinical_info:
        parts.append(f"Clinical information:\n{case.clinical_info}")
    if case.findings:
        parts.append(f"Symptoms and findings:\n{case.findings}")
    if case.diagnosis:
        parts.append(f"Diagnosis:\n{case.diagnosis}")
    if case.dialogue:
        turns = "\n".join(f"{speaker}: {text}" for speaker, text in case.dialogue)
        parts.append(f"Dialogue:\n{turns}")
    return "\n\n".join(parts)


def format_score(value: float) -> str:
    return f"{round(float(value), 2):g}"


class Tag(NamedTuple):
    content: str
    closed: bool


def extract_tag(text: str, name: str) -> Tag | None:
    """First ``<name>...</name>`` block, case-insensitive on the tag name.

    An opening tag with no closing tag yields the rest of the text with
    ``closed=False``. Returns None when the opening tag is absent.
    """
    pattern = re.compile(rf"<\s*{name}\s*>(.*?)<\s*/\s*{name}\s*>", re.IGNORECASE | re.DOTALL)
    m = pattern.search(text)
    if m:
        return Tag(m.group(1).strip(), True)
    m = re.search(rf"<\s*{name}\s*>", text, re.IGNORECASE)
    if m:
        return Tag(text[m.end():].strip(), False)
    return None


def strip_tags(text: str, *names: str) -> str:
    for name in names:
        text = re.sub(rf"<\s*{name}\s*>.*?<\s*/\s*{name}\s*>", "", text, flags=re.IGNORECASE | re.DOTALL)
    return text.strip()
