"""Gateway between the correction pipeline and an LLM backend.

The wire contract for remote backends is a single JSON POST: {"prompt": …}
in, {"text": …} out (a chat-completions adapter is provided for servers
that speak that shape instead). Model output is validated before anyone
trusts it — empty, overlong, or template-echo responses are rejected —
and every failure of any kind falls back to the designated best raw
hypothesis, so correct() never makes a transcript worse than the input
and never raises.

Mock backends (echo / kb-replace / fail-always) stand in for a fine-tuned
model in tests and offline evaluation. They are given the n-best set
alongside the request because their contracts are defined over the
hypothesis list (first hypothesis, medoid with source_id tie-break), which
the rendered prompt alone cannot supply once hypotheses are shuffled;
remote backends ignore that argument and see only the prompt.
"""

from __future__ import annotations

import enum
import os
import threading
import time
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import httpx

from .errors import ConfigError
from .kb import KnowledgeBase
from .metrics import edit_distance
from .prompts import Hypothesis, NBestSet, PromptSpec

__all__ = [
    "DEFAULT_MAX_OUTPUT_CHARS",
    "DEFAULT_TIMEOUT",
    "LlmRequest",
    "Origin",
    "CorrectionResult",
    "ParseFailure",
    "ParseFailureReason",
    "BackendError",
    "BackendTimeout",
    "Backend",
    "HttpBackend",
    "ChatCompletionBackend",
    "MockBehavior",
    "MockBackend",
    "mock_backend",
    "parse_response",
    "medoid_hypothesis",
    "correct",
]

DEFAULT_MAX_OUTPUT_CHARS = 200
DEFAULT_TIMEOUT = 10.0

# Markers that only ever appear in the instruction template itself; their
# presence in a response means the model echoed the prompt back.
_TEMPLATE_ECHO_MARKERS = ("Output Requirements", "ASR 1 Output")


@dataclass(frozen=True)
class LlmRequest:
    prompt: str
    max_output_chars: int = DEFAULT_MAX_OUTPUT_CHARS
    timeout: float = DEFAULT_TIMEOUT
    backend_id: str = ""


class Origin(enum.Enum):
    MODEL = "model"
    FALLBACK_BEST_HYPOTHESIS = "fallback"


@dataclass(frozen=True)
class CorrectionResult:
    """Outcome of one correction call.

    `failure` is None when the model answer was used, otherwise a short
    reason string ("timeout", "transport:…", "parse:…") explaining why the
    result fell back to a raw hypothesis.
    """

    text: str
    origin: Origin
    raw_response: str
    latency: float
    failure: str | None = None


class ParseFailureReason(enum.Enum):
    EMPTY = "empty"
    TOO_LONG = "too_long"
    TEMPLATE_ECHO = "template_echo"


class ParseFailure(Exception):
    def __init__(self, reason: ParseFailureReason, detail: str = "") -> None:
        super().__init__(f"{reason.value}{': ' + detail if detail else ''}")
        self.reason = reason


class BackendError(Exception):
    """The backend could not produce a response (transport, protocol, HTTP)."""


class BackendTimeout(BackendError):
    """The backend did not answer within the deadline."""


def _unwrap_braces(text: str) -> str:
    """Strip one outer {...} pair while the whole string is a single
    balanced pair; repeated so parsing is idempotent."""
    while len(text) >= 2 and text[0] == "{" and text[-1] == "}":
        depth = 0
        closes_at_end = False
        for i, ch in enumerate(text):
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    closes_at_end = i == len(text) - 1
                    break
        if not closes_at_end:
            break
        text = text[1:-1].strip()
    return text


def parse_response(raw: str, max_output_chars: int = DEFAULT_MAX_OUTPUT_CHARS) -> str:
    """Validate a raw model response and return the corrected text.

    Strips whitespace, unwraps a fully-enclosing {...} pair (the template
    asks for output in that shape), and rejects empty, overlong, and
    template-echo responses. parse(parse(x)) == parse(x) whenever the
    first parse succeeds.
    """
    text = _unwrap_braces(raw.strip())
    if not text:
        raise ParseFailure(ParseFailureReason.EMPTY)
    if len(text) > max_output_chars:
        raise ParseFailure(
            ParseFailureReason.TOO_LONG, f"{len(text)} chars > {max_output_chars}"
        )
    for marker in _TEMPLATE_ECHO_MARKERS:
        if marker in text:
            raise ParseFailure(ParseFailureReason.TEMPLATE_ECHO, marker)
    return text


@runtime_checkable
class Backend(Protocol):
    """Anything that can answer a correction prompt.

    `nbest` is passed for the benefit of local test doubles; network
    backends must not depend on it.
    """

    backend_id: str

    def complete(self, request: LlmRequest, nbest: NBestSet | None = None) -> str:
        ...


def _resolve_auth(auth_env: str | None) -> dict[str, str]:
    if not auth_env:
        return {}
    token = os.environ.get(auth_env)
    if not token:
        raise ConfigError(f"auth environment variable {auth_env!r} is not set")
    return {"Authorization": f"Bearer {token}"}


class HttpBackend:
    """JSON-over-HTTP backend: POST {"prompt": …} -> {"text": …}.

    `transport` is an httpx transport override for tests; production code
    leaves it unset.
    """

    def __init__(
        self,
        base_url: str,
        backend_id: str = "http",
        timeout: float = DEFAULT_TIMEOUT,
        auth_env: str | None = None,
        max_concurrent: int = 8,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        if max_concurrent < 1:
            raise ConfigError("max_concurrent must be >= 1")
        self.backend_id = backend_id
        self.base_url = base_url
        self.timeout = timeout
        self._client = httpx.Client(headers=_resolve_auth(auth_env), transport=transport)
        self._limiter = threading.Semaphore(max_concurrent)

    def _post(self, payload: dict, timeout: float) -> dict:
        with self._limiter:
            try:
                response = self._client.post(self.base_url, json=payload, timeout=timeout)
            except httpx.TimeoutException as exc:
                raise BackendTimeout(str(exc)) from exc
            except httpx.HTTPError as exc:
                raise BackendError(str(exc)) from exc
        if response.status_code != 200:
            raise BackendError(f"backend returned HTTP {response.status_code}")
        try:
            return response.json()
        except ValueError as exc:
            raise BackendError(f"backend returned non-JSON body: {exc}") from exc

    def complete(self, request: LlmRequest, nbest: NBestSet | None = None) -> str:
        body = self._post({"prompt": request.prompt}, request.timeout or self.timeout)
        text = body.get("text")
        if not isinstance(text, str):
            raise BackendError("backend response is missing a string 'text' field")
        return text


class ChatCompletionBackend(HttpBackend):
    """Adapter for servers that speak the chat-completions request shape."""

    def __init__(
        self,
        base_url: str,
        model: str,
        backend_id: str = "chat",
        timeout: float = DEFAULT_TIMEOUT,
        auth_env: str | None = None,
        max_concurrent: int = 8,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        super().__init__(
            base_url,
            backend_id=backend_id,
            timeout=timeout,
            auth_env=auth_env,
            max_concurrent=max_concurrent,
            transport=transport,
        )
        self.model = model

    def complete(self, request: LlmRequest, nbest: NBestSet | None = None) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
        }
        body = self._post(payload, request.timeout or self.timeout)
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed chat completion response: {exc}") from exc
        if not isinstance(text, str):
            raise BackendError("chat completion content is not a string")
        return text


def medoid_hypothesis(nbest: NBestSet) -> Hypothesis:
    """The hypothesis with minimal summed edit distance to the others,
    ties broken by source_id."""
    best: Hypothesis | None = None
    best_key: tuple[int, str] | None = None
    for hyp in nbest.hypotheses:
        total = sum(
            edit_distance(hyp.text, other.text)
            for other in nbest.hypotheses
            if other is not hyp
        )
        key = (total, hyp.source_id)
        if best_key is None or key < best_key:
            best, best_key = hyp, key
    assert best is not None
    return best


class MockBehavior(enum.Enum):
    ECHO = "echo"
    KB_REPLACE = "kb-replace"
    FAIL_ALWAYS = "fail"


class MockBackend:
    """Deterministic stand-in for a fine-tuned correction model.

    echo        -> first hypothesis, unchanged
    kb-replace  -> medoid hypothesis with every KB erroneous variant
                   replaced by its correct term, longest variants first
    fail        -> always raises BackendTimeout
    """

    def __init__(self, kb: KnowledgeBase | None, behavior: MockBehavior) -> None:
        self.backend_id = f"mock-{behavior.value}"
        self._kb = kb
        self._behavior = behavior

    def complete(self, request: LlmRequest, nbest: NBestSet | None = None) -> str:
        if self._behavior is MockBehavior.FAIL_ALWAYS:
            raise BackendTimeout("mock backend is configured to fail")
        if nbest is None:
            raise BackendError("mock backend needs the n-best set")
        if self._behavior is MockBehavior.ECHO:
            return nbest.hypotheses[0].text
        return self._kb_replace(medoid_hypothesis(nbest).text)

    def _kb_replace(self, text: str) -> str:
        if self._kb is None:
            return text
        snap = self._kb.snapshot()
        for erroneous in sorted(snap.variant_index, key=lambda e: (-len(e), e)):
            if erroneous in text:
                correct = snap.variant_index[erroneous][0]
                text = text.replace(erroneous, correct)
        return text


def mock_backend(kb: KnowledgeBase | None, behavior: MockBehavior | str) -> MockBackend:
    if isinstance(behavior, str):
        behavior = MockBehavior(behavior)
    return MockBackend(kb, behavior)


def _fallback_hypothesis(nbest: NBestSet, priority: Sequence[str] | None) -> Hypothesis:
    if priority:
        by_source = {h.source_id: h for h in nbest.hypotheses}
        for source_id in priority:
            hyp = by_source.get(source_id)
            if hyp is not None:
                return hyp
    return nbest.hypotheses[0]


def correct(
    prompt: PromptSpec,
    nbest: NBestSet,
    backend: Backend,
    fallback_priority: Sequence[str] | None = None,
    max_output_chars: int = DEFAULT_MAX_OUTPUT_CHARS,
    timeout: float = DEFAULT_TIMEOUT,
) -> CorrectionResult:
    """Ask the backend for a correction; on any failure return the best raw
    hypothesis instead. Never raises, whatever the backend does."""
    request = LlmRequest(
        prompt=prompt.rendered,
        max_output_chars=max_output_chars,
        timeout=timeout,
        backend_id=backend.backend_id,
    )
    start = time.monotonic()
    raw = ""
    try:
        raw = backend.complete(request, nbest)
        text = parse_response(raw, max_output_chars=max_output_chars)
        return CorrectionResult(
            text=text,
            origin=Origin.MODEL,
            raw_response=raw,
            latency=time.monotonic() - start,
        )
    except ParseFailure as exc:
        failure = f"parse:{exc.reason.value}"
    except BackendTimeout:
        failure = "timeout"
    except Exception as exc:  # malformed bytes, transport errors, anything
        failure = f"transport:{type(exc).__name__}"
    fallback = _fallback_hypothesis(nbest, fallback_priority)
    return CorrectionResult(
        text=fallback.text,
        origin=Origin.FALLBACK_BEST_HYPOTHESIS,
        raw_response=raw if isinstance(raw, str) else "",
        latency=time.monotonic() - start,
        failure=failure,
    )
