"""Chat-completion gateway: live HTTP provider or a deterministic script."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol

import httpx

from .core import TokenUsage
from .errors import (
    BackendError,
    BackendTimeoutError,
    EmptyResponseError,
    ProviderRejectedError,
    ValidationError,
)

logger = logging.getLogger(__name__)

ROLES = ("planner", "judge", "grader")


@dataclass(frozen=True)
class ChatRequest:
    role_tag: str
    user_text: str
    system_text: str = ""
    temperature: float = 0.0
    max_output_tokens: int = 4096
    case_id: str = ""
    iteration: int = 0

    def __post_init__(self) -> None:
        if self.role_tag not in ROLES:
            raise ValidationError(f"unknown role {self.role_tag!r}")
        if not self.user_text:
            raise ValidationError("user_text is empty")
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValidationError("max_output_tokens must be >= 1")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: TokenUsage
    backend_id: str


class Backend(Protocol):
    backend_id: str

    def complete(self, request: ChatRequest) -> ChatResponse: ...


def usage_total(responses: Iterable[ChatResponse]) -> TokenUsage:
    total = TokenUsage()
    for r in responses:
        total = total + r.usage
    return total


def whitespace_tokens(text: str) -> int:
    return len(text.split())


ScriptKey = tuple[str, str, int]


@dataclass(frozen=True)
class Script:
    entries: Mapping[ScriptKey, str]
    default_text: str | None = None

    def lookup(self, case_id: str, role: str, iteration: int) -> str | None:
        text = self.entries.get((case_id, role, iteration))
        return text if text is not None else self.default_text

    @classmethod
    def from_records(cls, records: Iterable[Mapping[str, Any]]) -> Script:
        entries: dict[ScriptKey, str] = {}
        default = None
        for n, rec in enumerate(records, 1):
            if "default_text" in rec:
                default = str(rec["default_text"])
                continue
            try:
                key = (str(rec["case_id"]), str(rec["role"]), int(rec["iteration"]))
                text = str(rec["text"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"script record {n}: {exc}") from None
            if key[1] not in ROLES:
                raise ValidationError(f"script record {n}: unknown role {key[1]!r}")
            if key in entries:
                raise ValidationError(f"script record {n}: duplicate key {key}")
            entries[key] = text
        return cls(entries, default)

    @classmethod
    def load(cls, path: str | Path) -> Script:
        from .io import read_jsonl

        return cls.from_records(read_jsonl(path))


class ScriptedBackend:
    """Replays canned responses keyed by (case_id, role, iteration).

    Token counts are whitespace-token counts of prompt and response, and
    wall time is reported as 0 so transcripts are byte-reproducible.
    """

    def __init__(self, script: Script, backend_id: str = "scripted") -> None:
        self.script = script
        self.backend_id = backend_id

    def complete(self, request: ChatRequest) -> ChatResponse:
        text = self.script.lookup(request.case_id, request.role_tag, request.iteration)
        if not text:
            raise EmptyResponseError(
                f"no script entry for ({request.case_id!r}, {request.role_tag}, {request.iteration})"
            )
        usage = TokenUsage(
            prompt_tokens=whitespace_tokens(request.system_text) + whitespace_tokens(request.user_text),
            completion_tokens=whitespace_tokens(text),
        )
        return ChatResponse(text, usage, self.backend_id)


class RecordingBackend:
    """Wraps a backend and keeps every request it forwards, in call order."""

    def __init__(self, inner: Backend) -> None:
        self.inner = inner
        self.backend_id = inner.backend_id
        self.requests: list[ChatRequest] = []
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.requests.append(request)
        return self.inner.complete(request)


_RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


@dataclass
class ChatCompletionBackend:
    """Minimal OpenAI-compatible ``/chat/completions`` client.

    Transient failures (timeouts, connection errors, 408/429/5xx) are retried
    ``retries`` times in total with exponential backoff from ``backoff_s``.
    """

    endpoint: str
    model: str
    api_key_env: str = "THERAAGENT_API_KEY"
    temperature: float | None = None
    timeout_s: float = 120.0
    retries: int = 3
    backoff_s: float = 1.0
    transport: httpx.BaseTransport | None = None
    sleep: Callable[[float], None] = time.sleep
    _client: httpx.Client | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        if self.retries < 1:
            raise ValidationError("retries must be >= 1")

    @property
    def backend_id(self) -> str:
        return self.model

    def _http(self) -> httpx.Client:
        if self._client is None:
            headers = {"Content-Type": "application/json"}
            key = os.environ.get(self.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
            self._client = httpx.Client(timeout=self.timeout_s, headers=headers, transport=self.transport)
        return self._client

    def _payload(self, request: ChatRequest) -> dict[str, Any]:
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": request.user_text})
        temperature = self.temperature if self.temperature is not None else request.temperature
        return {
            "model": self.model,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": request.max_output_tokens,
        }

    def complete(self, request: ChatRequest) -> ChatResponse:
        payload = self._payload(request)
        last_exc: BackendError | None = None
        for attempt in range(self.retries):
            if attempt:
                delay = self.backoff_s * 2 ** (attempt - 1)
                logger.warning("retrying %s call (attempt %d) in %.1fs: %s",
                               request.role_tag, attempt + 1, delay, last_exc)
                self.sleep(delay)
            started = time.monotonic()
            try:
                resp = self._http().post(self.endpoint, json=payload)
            except httpx.TimeoutException as exc:
                last_exc = BackendTimeoutError(f"{self.endpoint}: {exc}")
                continue
            except httpx.TransportError as exc:
                last_exc = BackendError(f"{self.endpoint}: {exc}")
                continue
            elapsed_ms = int((time.monotonic() - started) * 1000)
            if resp.status_code in _RETRYABLE_STATUS:
                last_exc = ProviderRejectedError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                continue
            if resp.status_code >= 400:
                raise ProviderRejectedError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return self._decode(resp, request, elapsed_ms)
        assert last_exc is not None
        raise last_exc

    def _decode(self, resp: httpx.Response, request: ChatRequest, elapsed_ms: int) -> ChatResponse:
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"] or ""
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed provider response: {exc}") from None
        if not text.strip():
            raise EmptyResponseError(f"empty completion for {request.role_tag} call")
        usage = body.get("usage") or {}
        prompt_tokens = usage.get("prompt_tokens")
        if prompt_tokens is None:
            prompt_tokens = whitespace_tokens(request.system_text) + whitespace_tokens(request.user_text)
        completion_tokens = usage.get("completion_tokens")
        if completion_tokens is None:
            completion_tokens = whitespace_tokens(text)
        return ChatResponse(
            text,
            TokenUsage(int(prompt_tokens), int(completion_tokens), elapsed_ms),
            self.backend_id,
        )

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None


def backend_from_config(cfg: Mapping[str, Any]) -> ChatCompletionBackend:
    """Build a live backend from a ``backend:`` config mapping."""
    try:
        endpoint = cfg["endpoint"]
        model = cfg["model"]
    except KeyError as exc:
        raise ValidationError(f"backend config missing {exc}") from None
    return ChatCompletionBackend(
        endpoint=endpoint,
        model=model,
        api_key_env=cfg.get("api_key_env", "THERAAGENT_API_KEY"),
        temperature=cfg.get("temperature"),
        timeout_s=float(cfg.get("timeout", 120.0)),
        retries=int(cfg.get("retries", 3)),
    )
