"""The correction pipeline and the evaluation harness built on it.

One utterance flows through: KB snapshot -> retrieve matching pairs ->
build prompt (seeded by a stable hash of the utterance id) -> gateway
correct (with fallback). The service serves exactly this path per request;
`evaluate` runs it over a corpus under several method variants and scores
each against the references:

    vanilla:<source>            one raw ASR stream, no correction
    pipeline                    full pipeline, all sources + KB
    pipeline-no-rag             all sources, KB withheld everywhere
    pipeline-no-nbest:<source>  KB on, but only one source's hypothesis

For mock backends that consult the KB directly, "KB withheld" has to mean
the whole method runs against an empty KB — stripping KB lines from the
prompt alone would leave a kb-replace mock unaffected. Method construction
therefore rebinds the backend to the method's KB via a factory.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

from .corpus import UtteranceRecord
from .errors import ConfigError, DataError
from .kb import KnowledgeBase
from .llm import (
    DEFAULT_MAX_OUTPUT_CHARS,
    DEFAULT_TIMEOUT,
    Backend,
    CorrectionResult,
    correct,
)
from .metrics import CorpusScore, normalize, score_corpus
from .prompts import DEFAULT_MAX_KB_LINES, NBestSet, PromptTemplate, build_prompt
from .seeding import stable_hash64

__all__ = [
    "CorrectionPipeline",
    "PipelineOutput",
    "MethodSpec",
    "parse_method",
    "run_method",
    "EvalRow",
    "EvalReport",
    "evaluate",
]


@dataclass(frozen=True)
class PipelineOutput:
    corrected: str
    origin: str
    kb_hits: tuple[tuple[str, str], ...]
    kb_revision: int
    result: CorrectionResult


@dataclass
class CorrectionPipeline:
    """Retrieval + prompting + gateway, bound to one KB and one backend."""

    kb: KnowledgeBase
    backend: Backend
    template: PromptTemplate | None = None
    fallback_priority: Sequence[str] | None = None
    max_kb_lines: int = DEFAULT_MAX_KB_LINES
    max_output_chars: int = DEFAULT_MAX_OUTPUT_CHARS
    timeout: float = DEFAULT_TIMEOUT

    def correct_nbest(self, nbest: NBestSet, seed: int | None = None) -> PipelineOutput:
        """Correct one n-best set. The prompt shuffle is seeded by the
        utterance id when no explicit seed is given."""
        snapshot = self.kb.snapshot()
        kb_hits = snapshot.retrieve([h.text for h in nbest.hypotheses])
        if seed is None:
            seed = stable_hash64("pipeline", nbest.utterance_id)
        prompt = build_prompt(
            nbest,
            kb_hits,
            seed=seed,
            template=self.template,
            max_kb_lines=self.max_kb_lines,
        )
        result = correct(
            prompt,
            nbest,
            self.backend,
            fallback_priority=self.fallback_priority,
            max_output_chars=self.max_output_chars,
            timeout=self.timeout,
        )
        return PipelineOutput(
            corrected=result.text,
            origin=result.origin.value,
            kb_hits=tuple(kb_hits),
            kb_revision=snapshot.revision,
            result=result,
        )


# ---------------------------------------------------------------------------
# Evaluation methods

_VANILLA = "vanilla"
_PIPELINE = "pipeline"
_PIPELINE_NO_RAG = "pipeline-no-rag"
_PIPELINE_NO_NBEST = "pipeline-no-nbest"


@dataclass(frozen=True)
class MethodSpec:
    """A parsed method string, e.g. "vanilla:svc-a" or "pipeline"."""

    kind: str
    source_id: str | None = None

    @property
    def name(self) -> str:
        return self.kind if self.source_id is None else f"{self.kind}:{self.source_id}"


def parse_method(spec: str) -> MethodSpec:
    kind, _, source = spec.partition(":")
    kind = kind.strip()
    source = source.strip()
    if kind in (_VANILLA, _PIPELINE_NO_NBEST):
        if not source:
            raise ConfigError(f"method {kind!r} needs a source id, e.g. '{kind}:svc-a'")
        return MethodSpec(kind=kind, source_id=source)
    if kind in (_PIPELINE, _PIPELINE_NO_RAG):
        if source:
            raise ConfigError(f"method {kind!r} does not take a source id")
        return MethodSpec(kind=kind)
    raise ConfigError(
        f"unknown method {spec!r}; expected vanilla:<source>, pipeline, "
        f"pipeline-no-rag, or pipeline-no-nbest:<source>"
    )


def _single_source(record: UtteranceRecord, source_id: str) -> NBestSet:
    for hyp in record.hypotheses:
        if hyp.source_id == source_id:
            return NBestSet(
                hypotheses=(hyp,), context=record.context, utterance_id=record.id
            )
    raise DataError(f"utterance {record.id!r} has no hypothesis from source {source_id!r}")


def run_method(
    method: MethodSpec,
    records: Sequence[UtteranceRecord],
    kb: KnowledgeBase,
    backend_factory: Callable[[KnowledgeBase], Backend],
    template: PromptTemplate | None = None,
    max_kb_lines: int = DEFAULT_MAX_KB_LINES,
    workers: int = 1,
) -> list[str]:
    """Corrected text per corpus record, in corpus order.

    backend_factory builds the backend against the KB the method actually
    uses (the real KB, or an empty one for pipeline-no-rag), so KB-aware
    mocks honor the ablation.
    """
    if method.kind == _VANILLA:
        return [_single_source(r, method.source_id).hypotheses[0].text for r in records]

    method_kb = KnowledgeBase() if method.kind == _PIPELINE_NO_RAG else kb
    pipe = CorrectionPipeline(
        kb=method_kb,
        backend=backend_factory(method_kb),
        template=template,
        max_kb_lines=max_kb_lines,
    )

    def one(record: UtteranceRecord) -> str:
        if method.kind == _PIPELINE_NO_NBEST:
            nbest = _single_source(record, method.source_id)
        else:
            nbest = record.nbest()
        return pipe.correct_nbest(nbest).corrected

    if workers <= 1:
        return [one(r) for r in records]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, records))


@dataclass(frozen=True)
class EvalRow:
    method_name: str
    cer: float
    ser: float
    sentences: int


@dataclass(frozen=True)
class EvalReport:
    corpus_id: str
    config_fingerprint: str
    rows: tuple[EvalRow, ...]

    def __post_init__(self) -> None:
        names = [row.method_name for row in self.rows]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate method names in report: {names}")

    def row(self, method_name: str) -> EvalRow:
        for row in self.rows:
            if row.method_name == method_name:
                return row
        raise KeyError(method_name)

    def to_json(self) -> str:
        return json.dumps(
            {
                "corpus_id": self.corpus_id,
                "config_fingerprint": self.config_fingerprint,
                "rows": [
                    {
                        "method_name": row.method_name,
                        "cer": round(row.cer, 6),
                        "ser": round(row.ser, 6),
                        "sentences": row.sentences,
                    }
                    for row in self.rows
                ],
            },
            ensure_ascii=False,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        data = json.loads(text)
        return cls(
            corpus_id=data["corpus_id"],
            config_fingerprint=data["config_fingerprint"],
            rows=tuple(
                EvalRow(
                    method_name=row["method_name"],
                    cer=row["cer"],
                    ser=row["ser"],
                    sentences=row["sentences"],
                )
                for row in data["rows"]
            ),
        )

    def render_table(self) -> str:
        name_width = max([len("Method")] + [len(r.method_name) for r in self.rows])
        lines = [
            f"{'Method':<{name_width}}  {'CER%':>8}  {'SER%':>8}",
            f"{'-' * name_width}  {'-' * 8}  {'-' * 8}",
        ]
        for row in self.rows:
            lines.append(
                f"{row.method_name:<{name_width}}  {row.cer:>8.2f}  {row.ser:>8.2f}"
            )
        return "\n".join(lines)


def evaluate(
    records: Sequence[UtteranceRecord],
    methods: Sequence[MethodSpec],
    kb: KnowledgeBase,
    backend_factory: Callable[[KnowledgeBase], Backend],
    corpus_id: str = "",
    config_fingerprint: str = "",
    template: PromptTemplate | None = None,
    strip_punctuation: bool = True,
    workers: int = 1,
) -> tuple[EvalReport, dict[str, list[str]]]:
    """Score every method over the corpus.

    Returns the report plus each method's corrected texts (corpus order)
    so callers can dump them for independent rescoring.
    """
    if not methods:
        raise ConfigError("need at least one evaluation method")
    references = [normalize(r.reference, strip_punctuation) for r in records]
    rows: list[EvalRow] = []
    corrected_by_method: dict[str, list[str]] = {}
    for method in methods:
        corrected = run_method(
            method, records, kb, backend_factory, template=template, workers=workers
        )
        pairs = [
            (normalize(text, strip_punctuation), ref)
            for text, ref in zip(corrected, references)
        ]
        score: CorpusScore = score_corpus(pairs)
        rows.append(
            EvalRow(
                method_name=method.name,
                cer=score.cer,
                ser=score.ser,
                sentences=score.sentences,
            )
        )
        corrected_by_method[method.name] = corrected
    report = EvalReport(
        corpus_id=corpus_id,
        config_fingerprint=config_fingerprint,
        rows=tuple(rows),
    )
    return report, corrected_by_method
