"""Guideline corpus and Okapi BM25 ranking."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import ValidationError

K1 = 1.2
B = 0.75
MAX_QUERY_TERMS = 512
INDEX_FORMAT = "theraagent-bm25/1"

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric runs."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class GuidelineDoc:
    doc_id: str
    body: str
    title: str = ""
    terms: Counter = field(default_factory=Counter, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValidationError("guideline doc_id is empty")
        if not self.body.strip():
            raise ValidationError(f"guideline {self.doc_id!r} has an empty body")
        if not self.terms:
            object.__setattr__(self, "terms", Counter(tokenize(f"{self.title} {self.body}")))

    @property
    def length(self) -> int:
        return sum(self.terms.values())

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> GuidelineDoc:
        try:
            return cls(str(data["doc_id"]), str(data["body"]), str(data.get("title") or ""))
        except KeyError as exc:
            raise ValidationError(f"guideline record missing {exc}") from None

    def to_dict(self) -> dict[str, str]:
        return {"doc_id": self.doc_id, "title": self.title, "body": self.body}


class RetrievalIndex:
    """Immutable BM25 index over a guideline corpus."""

    def __init__(self, docs: Sequence[GuidelineDoc], k1: float = K1, b: float = B) -> None:
        self.k1 = k1
        self.b = b
        self._docs: dict[str, GuidelineDoc] = {}
        for doc in docs:
            if doc.doc_id in self._docs:
                raise ValidationError(f"duplicate doc_id {doc.doc_id!r}")
            self._docs[doc.doc_id] = doc
        df: Counter = Counter()
        for doc in self._docs.values():
            df.update(doc.terms.keys())
        self._df = dict(df)
        n = len(self._docs)
        self.avg_doc_length = sum(d.length for d in self._docs.values()) / n if n else 0.0

    def __len__(self) -> int:
        return len(self._docs)

    @property
    def documents(self) -> list[GuidelineDoc]:
        return list(self._docs.values())

    def get(self, doc_id: str) -> GuidelineDoc:
        return self._docs[doc_id]

    def document_frequency(self, term: str) -> int:
        return self._df.get(term, 0)

    def idf(self, term: str) -> float:
        n = len(self._docs)
        df = self._df.get(term, 0)
        return math.log((n - df + 0.5) / (df + 0.5) + 1.0)

    def score(self, doc: GuidelineDoc, terms: Iterable[str]) -> float:
        total = 0.0
        norm = self.k1 * (1 - self.b + self.b * doc.length / self.avg_doc_length)
        for term in terms:
            tf = doc.terms.get(term, 0)
            if tf:
                total += self.idf(term) * tf * (self.k1 + 1) / (tf + norm)
        return total

    def query(self, text: str, k: int = 3) -> list[tuple[str, float]]:
        """Top ``k`` (doc_id, score) pairs, score descending then doc_id ascending.

        Distinct query terms are scored once each; documents sharing no term
        with the query are never returned.
        """
        if k < 1:
            raise ValidationError("k must be >= 1")
        terms = set(tokenize(text)[:MAX_QUERY_TERMS])
        hits = []
        for doc in self._docs.values():
            if terms & doc.terms.keys():
                hits.append((doc.doc_id, self.score(doc, terms)))
        hits.sort(key=lambda h: (-h[1], h[0]))
        return hits[:k]

    def save(self, path: str | Path) -> None:
        payload = {
            "format": INDEX_FORMAT,
            "k1": self.k1,
            "b": self.b,
            "documents": [d.to_dict() for d in self._docs.values()],
        }
        Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> RetrievalIndex:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if data.get("format") != INDEX_FORMAT:
            raise ValidationError(f"{path}: not a {INDEX_FORMAT} index")
        docs = [GuidelineDoc.from_dict(d) for d in data["documents"]]
        return cls(docs, k1=data["k1"], b=data["b"])


def ingest(docs: Sequence[GuidelineDoc], k1: float = K1, b: float = B) -> RetrievalIndex:
    return RetrievalIndex(docs, k1=k1, b=b)


def load_corpus(path: str | Path) -> RetrievalIndex:
    """Build an index from a JSONL corpus or load a saved index file."""
    from .io import read_jsonl

    path = Path(path)
    if path.suffix == ".json":
        return RetrievalIndex.load(path)
    return ingest([GuidelineDoc.from_dict(r) for r in read_jsonl(path)])


def case_query(diagnosis: str, findings: str, plan_text: str = "") -> str:
    return " ".join(p for p in (diagnosis, findings, plan_text) if p)


def retrieve_context(index: RetrievalIndex | None, query: str, k: int) -> list[tuple[str, str]]:
    """(doc_id, body) pairs for prompt injection; empty without an index."""
    if index is None or len(index) == 0:
        return []
    return [(doc_id, index.get(doc_id).body) for doc_id, _ in index.query(query, k)]
