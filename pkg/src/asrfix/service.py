"""HTTP correction service.

Endpoints (all JSON):

    POST   /v1/correct     correct one n-best set
    POST   /v1/kb/entries  add a (correct, erroneous) pair
    GET    /v1/kb/entries  list the KB
    DELETE /v1/kb/entries  remove a pair
    POST   /v1/feedback    report the final text a player accepted
    GET    /v1/health      liveness + KB revision + backend id

Each correction request takes one KB snapshot up front, so a concurrent KB
edit never produces a half-updated view; an edit is visible to the next
request after its POST returns. Malformed bodies are a 400 (validation
errors included); 503 is reserved for "the backend failed and fallback is
disabled", otherwise a failed backend still yields a 200 whose origin is
"fallback".

Privacy: hypothesis and corrected texts never reach the log at INFO level;
turn on DEBUG explicitly to trace content.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from fastapi import Depends, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .errors import ConfigError, DataError
from .kb import KnowledgeBase, Source, load_kb, mine_pairs
from .llm import (
    DEFAULT_MAX_OUTPUT_CHARS,
    DEFAULT_TIMEOUT,
    Backend,
    ChatCompletionBackend,
    HttpBackend,
    MockBehavior,
    mock_backend,
)
from .metrics import normalize
from .pipeline import CorrectionPipeline
from .prompts import (
    DEFAULT_K_MAX,
    DEFAULT_MAX_KB_LINES,
    Hypothesis,
    NBestSet,
    PromptTemplate,
    load_template,
)
from .seeding import stable_hash64

__all__ = ["ServiceSettings", "create_app", "build_backend", "load_service_config"]

logger = logging.getLogger("asrfix.service")


@dataclass
class ServiceSettings:
    kb: KnowledgeBase
    backend: Backend
    template: PromptTemplate | None = None
    k_max: int = DEFAULT_K_MAX
    max_kb_lines: int = DEFAULT_MAX_KB_LINES
    max_output_chars: int = DEFAULT_MAX_OUTPUT_CHARS
    timeout: float = DEFAULT_TIMEOUT
    fallback_priority: Sequence[str] | None = None
    fallback_enabled: bool = True
    auth_token: str | None = None
    feedback_log_path: Path | None = None
    auto_kb_update: bool = False
    auto_kb_min_support: int = 2
    mine_span_chars: int = 3


class HypothesisIn(BaseModel):
    source_id: str = Field(min_length=1)
    text: str = Field(min_length=1)


class CorrectIn(BaseModel):
    hypotheses: list[HypothesisIn] = Field(min_length=1)
    context: str = ""
    utterance_id: str | None = None


class CorrectOut(BaseModel):
    utterance_id: str
    corrected: str
    origin: str
    kb_hits: list[tuple[str, str]]
    revision: int
    latency_ms: float


class KbEntryIn(BaseModel):
    correct: str = Field(min_length=1)
    erroneous: str = Field(min_length=1)


class FeedbackIn(BaseModel):
    utterance_id: str = Field(min_length=1)
    final_text: str = Field(min_length=1)
    accepted: bool


@dataclass
class _ServedRecord:
    hypotheses: tuple[Hypothesis, ...]
    context: str
    corrected: str


@dataclass
class _ServiceState:
    served: dict[str, _ServedRecord] = field(default_factory=dict)
    feedback_seen: set[str] = field(default_factory=set)
    feedback_rows: list[dict] = field(default_factory=list)
    pair_support: dict[tuple[str, str], int] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)


def create_app(settings: ServiceSettings) -> FastAPI:
    app = FastAPI(title="asrfix correction service")
    state = _ServiceState()
    pipeline = CorrectionPipeline(
        kb=settings.kb,
        backend=settings.backend,
        template=settings.template,
        fallback_priority=settings.fallback_priority,
        max_kb_lines=settings.max_kb_lines,
        max_output_chars=settings.max_output_chars,
        timeout=settings.timeout,
    )

    @app.exception_handler(RequestValidationError)
    async def _validation_400(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.exception_handler(DataError)
    async def _data_400(request: Request, exc: DataError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    def require_auth(request: Request) -> None:
        if settings.auth_token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {settings.auth_token}":
            raise _HttpError(401, "missing or invalid bearer token")

    class _HttpError(Exception):
        def __init__(self, status: int, detail: str) -> None:
            self.status = status
            self.detail = detail

    @app.exception_handler(_HttpError)
    async def _http_error(request: Request, exc: _HttpError):
        return JSONResponse(status_code=exc.status, content={"detail": exc.detail})

    @app.post("/v1/correct", response_model=CorrectOut)
    def correct_endpoint(body: CorrectIn) -> CorrectOut:
        if len(body.hypotheses) > settings.k_max:
            raise _HttpError(
                400, f"at most {settings.k_max} hypotheses per request, got {len(body.hypotheses)}"
            )
        utterance_id = body.utterance_id
        if not utterance_id:
            canonical = json.dumps(body.model_dump(), sort_keys=True, ensure_ascii=False)
            utterance_id = f"req-{stable_hash64('request', canonical):016x}"
        nbest = NBestSet(
            hypotheses=tuple(Hypothesis(h.source_id, h.text) for h in body.hypotheses),
            context=body.context,
            utterance_id=utterance_id,
        )
        out = pipeline.correct_nbest(nbest, seed=stable_hash64("pipeline", utterance_id))
        if out.result.failure is not None and not settings.fallback_enabled:
            raise _HttpError(503, f"backend failed ({out.result.failure}) and fallback is disabled")
        with state.lock:
            state.served[utterance_id] = _ServedRecord(
                hypotheses=nbest.hypotheses, context=nbest.context, corrected=out.corrected
            )
        logger.info(
            "correct utterance=%s sources=%d origin=%s kb_hits=%d revision=%d latency_ms=%.1f",
            utterance_id,
            len(nbest.hypotheses),
            out.origin,
            len(out.kb_hits),
            out.kb_revision,
            out.result.latency * 1000.0,
        )
        logger.debug("correct utterance=%s corrected=%r", utterance_id, out.corrected)
        return CorrectOut(
            utterance_id=utterance_id,
            corrected=out.corrected,
            origin=out.origin,
            kb_hits=[tuple(pair) for pair in out.kb_hits],
            revision=out.kb_revision,
            latency_ms=out.result.latency * 1000.0,
        )

    @app.post("/v1/kb/entries", dependencies=[Depends(require_auth)])
    def add_kb_entry(body: KbEntryIn) -> dict:
        if body.correct == body.erroneous:
            raise _HttpError(409, "correct and erroneous strings must differ")
        revision = settings.kb.add_entry(body.correct, body.erroneous, source=Source.MANUAL)
        logger.info("kb add -> revision %d", revision)
        return {"revision": revision}

    @app.get("/v1/kb/entries", dependencies=[Depends(require_auth)])
    def list_kb_entries() -> dict:
        snap = settings.kb.snapshot()
        entries = [
            {
                "correct": correct,
                "variants": [
                    {
                        "erroneous": v.erroneous,
                        "source": v.source.value,
                        "count": v.count,
                    }
                    for _, v in sorted(snap.entries[correct].variants.items())
                ],
            }
            for correct in sorted(snap.entries)
        ]
        return {"revision": snap.revision, "entries": entries}

    @app.delete("/v1/kb/entries", dependencies=[Depends(require_auth)])
    def delete_kb_entry(body: KbEntryIn) -> dict:
        try:
            revision = settings.kb.remove_entry(body.correct, body.erroneous)
        except KeyError:
            raise _HttpError(404, f"no KB entry {body.correct!r} | {body.erroneous!r}") from None
        logger.info("kb delete -> revision %d", revision)
        return {"revision": revision}

    @app.post("/v1/feedback")
    def feedback_endpoint(body: FeedbackIn) -> dict:
        with state.lock:
            served = state.served.get(body.utterance_id)
            if served is None:
                raise _HttpError(404, f"utterance {body.utterance_id!r} was never served")
            if body.utterance_id in state.feedback_seen:
                return {"logged": True, "duplicate": True}
            state.feedback_seen.add(body.utterance_id)
            row = {
                "utterance_id": body.utterance_id,
                "final_text": body.final_text,
                "accepted": body.accepted,
                "context": served.context,
                "corrected": served.corrected,
                "hypotheses": [
                    {"source_id": h.source_id, "text": h.text} for h in served.hypotheses
                ],
            }
            state.feedback_rows.append(row)
            if settings.feedback_log_path is not None:
                with open(settings.feedback_log_path, "a", encoding="utf-8") as fp:
                    fp.write(json.dumps(row, ensure_ascii=False) + "\n")
            if settings.auto_kb_update:
                _auto_update_kb(settings, state, served, body.final_text)
        logger.info("feedback utterance=%s accepted=%s", body.utterance_id, body.accepted)
        return {"logged": True, "duplicate": False}

    @app.get("/v1/health")
    def health() -> dict:
        return {
            "status": "ok",
            "kb_revision": settings.kb.revision,
            "backend_id": settings.backend.backend_id,
        }

    app.state.settings = settings
    app.state.service_state = state
    return app


def _auto_update_kb(
    settings: ServiceSettings,
    state: _ServiceState,
    served: _ServedRecord,
    final_text: str,
) -> None:
    """Count mined (correct, erroneous) pairs from feedback; insert into the
    KB once a pair reaches the support threshold. Called under state.lock."""
    ref = normalize(final_text)
    promoted: list[tuple[str, str]] = []
    for hyp in served.hypotheses:
        for mined in mine_pairs(normalize(hyp.text), ref, settings.mine_span_chars):
            key = (mined.correct_span, mined.error_span)
            state.pair_support[key] = state.pair_support.get(key, 0) + 1
            if state.pair_support[key] == settings.auto_kb_min_support:
                promoted.append(key)
    if promoted:
        settings.kb.add_pairs(promoted, source=Source.RUNTIME)
        logger.info("auto KB update: %d pairs promoted", len(promoted))


def build_backend(config: dict) -> Backend:
    """Build a backend from its config dict ({"type": "mock"|"http"|"chat", …})."""
    kind = config.get("type")
    if kind == "mock":
        kb = config.get("_kb")
        if kb is not None and not isinstance(kb, KnowledgeBase):
            raise ConfigError("mock backend '_kb' must be a KnowledgeBase")
        try:
            behavior = MockBehavior(config.get("behavior", "echo"))
        except ValueError:
            raise ConfigError(f"unknown mock behavior {config.get('behavior')!r}") from None
        return mock_backend(kb, behavior)
    if kind == "http":
        return HttpBackend(
            base_url=config["base_url"],
            backend_id=config.get("backend_id", "http"),
            timeout=float(config.get("timeout", DEFAULT_TIMEOUT)),
            auth_env=config.get("auth_env"),
            max_concurrent=int(config.get("max_concurrent", 8)),
        )
    if kind == "chat":
        return ChatCompletionBackend(
            base_url=config["base_url"],
            model=config["model"],
            backend_id=config.get("backend_id", "chat"),
            timeout=float(config.get("timeout", DEFAULT_TIMEOUT)),
            auth_env=config.get("auth_env"),
            max_concurrent=int(config.get("max_concurrent", 8)),
        )
    raise ConfigError(f"unknown backend type {kind!r}")


def load_service_config(path: str | Path) -> tuple[ServiceSettings, dict]:
    """Load service settings from a JSON file.

    Returns (settings, extras) where extras holds serve-time options that
    are not part of the settings themselves (host, port).
    """
    import os

    path = Path(path)
    try:
        config = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read service config {path}: {exc}") from exc

    kb = KnowledgeBase()
    if config.get("kb_path"):
        kb = load_kb(path.parent / config["kb_path"])

    backend_config = config.get("backend")
    if not isinstance(backend_config, dict):
        raise ConfigError(f"{path}: missing 'backend' object")
    backend_config = dict(backend_config)
    if backend_config.get("type") == "mock":
        backend_config["_kb"] = kb
    backend = build_backend(backend_config)

    template = None
    if config.get("template_path"):
        template = load_template(path.parent / config["template_path"])

    auth_token = None
    if config.get("auth_token_env"):
        auth_token = os.environ.get(config["auth_token_env"])
        if not auth_token:
            raise ConfigError(
                f"{path}: auth_token_env {config['auth_token_env']!r} is not set"
            )

    feedback_log = None
    if config.get("feedback_log"):
        feedback_log = path.parent / config["feedback_log"]

    settings = ServiceSettings(
        kb=kb,
        backend=backend,
        template=template,
        k_max=int(config.get("k_max", DEFAULT_K_MAX)),
        max_kb_lines=int(config.get("max_kb_lines", DEFAULT_MAX_KB_LINES)),
        max_output_chars=int(config.get("max_output_chars", DEFAULT_MAX_OUTPUT_CHARS)),
        timeout=float(config.get("timeout", DEFAULT_TIMEOUT)),
        fallback_priority=config.get("fallback_priority"),
        fallback_enabled=bool(config.get("fallback_enabled", True)),
        auth_token=auth_token,
        feedback_log_path=feedback_log,
        auto_kb_update=bool(config.get("auto_kb_update", False)),
        auto_kb_min_support=int(config.get("auto_kb_min_support", 2)),
    )
    extras = {
        "host": config.get("host", "127.0.0.1"),
        "port": int(config.get("port", 8080)),
    }
    return settings, extras
