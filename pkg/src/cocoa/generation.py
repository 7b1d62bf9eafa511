"""Generator gateway: one interface over a remote chat-completion service
and a deterministic scripted mock used for tests and offline runs.

The remote side speaks the OpenAI-compatible /v1/chat/completions shape
with the whole prompt sent as a single user message. The API key is read
from the COCOA_API_KEY environment variable.
"""
from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import requests

API_KEY_ENV = "COCOA_API_KEY"

ROLE_TAGS = ("internal_agent", "external_agent", "decision_agent", "unified")

DEFAULT_MAX_TOKENS = 1024
UNIFIED_MAX_TOKENS = 2048


class GenerationError(RuntimeError):
    pass


class TransportError(GenerationError):
    pass


class EmptyOutputError(GenerationError):
    pass


class NoRuleError(GenerationError):
    pass


class ScriptExhaustedError(GenerationError):
    pass


class MockScriptError(ValueError):
    pass


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    temperature: float = 0.0
    max_tokens: int = DEFAULT_MAX_TOKENS
    stop_sequences: tuple[str, ...] = ()
    model_name: str = "default"
    role_tag: str = "unified"

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")
        if self.role_tag not in ROLE_TAGS:
            raise ValueError(f"unknown role_tag {self.role_tag!r}")
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))


@dataclass(frozen=True)
class GenerationResult:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    finish_reason: str = "stop"  # "stop" | "length" | "other"
    retries: int = 0


class GeneratorBackend(Protocol):
    def generate(self, request: GenerationRequest) -> GenerationResult: ...


@dataclass(frozen=True)
class MockRule:
    match: str
    response: str
    pattern: bool = False

    def matches(self, prompt: str) -> bool:
        if self.pattern:
            return re.search(self.match, prompt, re.DOTALL) is not None
        return self.match in prompt


class MockScript:
    """Ordered matcher->response rules.

    In strict-sequence mode the rules are consumed front to back; the
    matcher of the next rule must match or the call errors, and running
    past the end of the script errors.
    """

    def __init__(self, rules: list[MockRule], strict_sequence: bool = False):
        self.rules = list(rules)
        self.strict_sequence = strict_sequence

    def __len__(self) -> int:
        return len(self.rules)


def load_mock_script(path: str | Path, strict_sequence: bool = False) -> MockScript:
    """Parse a JSONL rule file: {"match": str, "pattern": bool, "response": str} per line."""
    path = Path(path)
    rules: list[MockRule] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise MockScriptError(f"{path}:{line_no}: invalid JSON ({e.msg})") from None
            if not isinstance(row, dict) or "match" not in row or "response" not in row:
                raise MockScriptError(f"{path}:{line_no}: rule needs 'match' and 'response'")
            if not isinstance(row["match"], str) or not isinstance(row["response"], str):
                raise MockScriptError(f"{path}:{line_no}: 'match' and 'response' must be strings")
            rules.append(
                MockRule(match=row["match"], response=row["response"], pattern=bool(row.get("pattern", False)))
            )
    return MockScript(rules, strict_sequence=strict_sequence)


class MockBackend:
    """Deterministic generator driven by a MockScript."""

    def __init__(self, script: MockScript):
        self.script = script
        self._cursor = 0
        self._lock = threading.Lock()

    def generate(self, request: GenerationRequest) -> GenerationResult:
        if self.script.strict_sequence:
            with self._lock:
                if self._cursor >= len(self.script.rules):
                    raise ScriptExhaustedError(
                        f"mock script exhausted after {self._cursor} calls (role {request.role_tag})"
                    )
                rule = self.script.rules[self._cursor]
                self._cursor += 1
            if not rule.matches(request.prompt):
                raise NoRuleError(
                    f"strict-sequence rule {self._cursor} does not match prompt (role {request.role_tag})"
                )
        else:
            rule = next((r for r in self.script.rules if r.matches(request.prompt)), None)
            if rule is None:
                raise NoRuleError(f"no mock rule matches prompt (role {request.role_tag})")
        if not rule.response:
            raise EmptyOutputError(f"mock produced empty output (role {request.role_tag})")
        return GenerationResult(text=rule.response)


class RemoteBackend:
    """OpenAI-compatible chat-completions client with bounded retries.

    Transient transport failures (connection errors, timeouts, 5xx) are
    retried with exponential backoff; 4xx responses never are.
    """

    def __init__(
        self,
        endpoint: str,
        retries: int = 2,
        backoff_s: float = 0.5,
        timeout: float = 120.0,
        session: requests.Session | None = None,
    ):
        self.url = self._resolve_url(endpoint)
        self.retries = retries
        self.backoff_s = backoff_s
        self.timeout = timeout
        self._session = session or requests.Session()

    @staticmethod
    def _resolve_url(endpoint: str) -> str:
        base = endpoint.rstrip("/")
        if base.endswith("/chat/completions"):
            return base
        if base.endswith("/v1"):
            return base + "/chat/completions"
        return base + "/v1/chat/completions"

    def generate(self, request: GenerationRequest) -> GenerationResult:
        payload: dict = {
            "model": request.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.stop_sequences:
            payload["stop"] = list(request.stop_sequences)
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._session.post(self.url, json=payload, headers=headers, timeout=self.timeout)
            except requests.RequestException as e:
                last_error = e
            else:
                if resp.status_code < 300:
                    return self._parse(resp, retries_used=attempt)
                if 400 <= resp.status_code < 500:
                    raise TransportError(
                        f"backend rejected request: HTTP {resp.status_code}: {resp.text[:500]}"
                    )
                last_error = TransportError(f"backend returned HTTP {resp.status_code}")
            if attempt < self.retries:
                time.sleep(self.backoff_s * (2**attempt))
        raise TransportError(f"generation failed after {self.retries + 1} attempts: {last_error}")

    def _parse(self, resp: requests.Response, retries_used: int) -> GenerationResult:
        try:
            data = resp.json()
            choice = data["choices"][0]
            text = choice["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise TransportError(f"unexpected completion response shape: {e}") from e
        if not text:
            raise EmptyOutputError("backend returned an empty completion")
        usage = data.get("usage") or {}
        raw_reason = choice.get("finish_reason")
        finish = raw_reason if raw_reason in ("stop", "length") else "other"
        return GenerationResult(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", 0) or 0),
            completion_tokens=int(usage.get("completion_tokens", 0) or 0),
            finish_reason=finish,
            retries=retries_used,
        )


def generate(backend: GeneratorBackend, request: GenerationRequest) -> GenerationResult:
    return backend.generate(request)
