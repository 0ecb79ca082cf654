"""Construction of correction prompts from n-best ASR hypothesis sets.

A prompt combines three blocks: conversation context, retrieved
terminology KB pairs rendered as `correct | erroneous` lines, and the
hypothesis texts as numbered "ASR i Output:" lines. Hypothesis order is
shuffled uniformly at random from the given seed so a fine-tuned model
cannot learn to trust a fixed slot; rendering is byte-deterministic for
identical inputs and seed.

Also home to the SFT exporter that turns (n-best, KB, reference) triples
into {prompt, target} JSONL training rows.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

from .errors import ConfigError, DataError
from .seeding import stable_hash64

__all__ = [
    "DEFAULT_K_MAX",
    "DEFAULT_MAX_KB_LINES",
    "Hypothesis",
    "NBestSet",
    "PromptTemplate",
    "PromptSpec",
    "default_template",
    "load_template",
    "build_prompt",
    "SftRecord",
    "SftExample",
    "export_sft",
    "write_sft_jsonl",
]

DEFAULT_K_MAX = 8
DEFAULT_MAX_KB_LINES = 20

_EMPTY_KB_LINE = "(no entries)"
_EMPTY_CONTEXT = "(none)"

_COUNT_WORDS = {
    1: "One", 2: "Two", 3: "Three", 4: "Four", 5: "Five",
    6: "Six", 7: "Seven", 8: "Eight", 9: "Nine", 10: "Ten",
}


@dataclass(frozen=True)
class Hypothesis:
    """One ASR system's transcript of an utterance."""

    source_id: str
    text: str

    def __post_init__(self) -> None:
        if not self.source_id:
            raise DataError("hypothesis source_id must be nonempty")


@dataclass(frozen=True)
class NBestSet:
    """The hypotheses for one utterance, one per ASR source."""

    hypotheses: tuple[Hypothesis, ...]
    context: str = ""
    utterance_id: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.hypotheses, tuple):
            object.__setattr__(self, "hypotheses", tuple(self.hypotheses))
        if not 1 <= len(self.hypotheses) <= DEFAULT_K_MAX:
            raise DataError(
                f"n-best set must hold 1..{DEFAULT_K_MAX} hypotheses, got {len(self.hypotheses)}"
            )
        sources = [h.source_id for h in self.hypotheses]
        if len(set(sources)) != len(sources):
            raise DataError(f"duplicate source_id in n-best set: {sources}")

    @property
    def texts(self) -> tuple[str, ...]:
        return tuple(h.text for h in self.hypotheses)


@dataclass(frozen=True)
class PromptTemplate:
    """A versioned prompt skeleton.

    `text` uses str.format placeholders: {model_count}, {model_count_lower},
    {context}, {kb}, {asr_outputs}. max_slots=None means the template takes
    any number of hypotheses.
    """

    version: str
    text: str
    max_slots: int | None = None


_TEMPLATE_PACKAGE = "asrfix.templates"
_DEFAULT_TEMPLATE_FILE = "correction_prompt_v1.txt"
_template_cache: dict[str, PromptTemplate] = {}


def default_template() -> PromptTemplate:
    """The built-in v1 correction template (variadic)."""
    cached = _template_cache.get("v1")
    if cached is None:
        text = (
            resources.files(_TEMPLATE_PACKAGE)
            .joinpath(_DEFAULT_TEMPLATE_FILE)
            .read_text(encoding="utf-8")
        )
        cached = PromptTemplate(version="v1", text=text, max_slots=None)
        _template_cache["v1"] = cached
    return cached


def load_template(path: str | Path, version: str | None = None) -> PromptTemplate:
    """Load a template from a file; the version defaults to the file stem."""
    path = Path(path)
    return PromptTemplate(version=version or path.stem, text=path.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class PromptSpec:
    """A fully rendered prompt plus the choices that produced it."""

    rendered: str
    permutation: tuple[int, ...]
    kb_lines: tuple[tuple[str, str], ...]
    seed: int
    template_version: str = "v1"


def _count_word(n: int) -> str:
    return _COUNT_WORDS.get(n, str(n))


def build_prompt(
    nbest: NBestSet,
    kb_pairs: Sequence[tuple[str, str]],
    seed: int,
    template: PromptTemplate | None = None,
    max_kb_lines: int = DEFAULT_MAX_KB_LINES,
) -> PromptSpec:
    """Render a correction prompt.

    Hypotheses appear in a uniform-random permutation drawn from `seed`.
    KB pairs are deduplicated, ordered longest-erroneous-first, and capped
    at max_kb_lines. Identical inputs and seed render identical bytes.
    """
    if template is None:
        template = default_template()
    if template.max_slots is not None and len(nbest.hypotheses) > template.max_slots:
        raise ConfigError(
            f"template {template.version!r} takes at most {template.max_slots} hypotheses, "
            f"got {len(nbest.hypotheses)}"
        )
    if max_kb_lines < 0:
        raise ConfigError("max_kb_lines must be >= 0")

    order = list(range(len(nbest.hypotheses)))
    random.Random(seed).shuffle(order)

    kb_lines = sorted(set(kb_pairs), key=lambda p: (-len(p[1]), p[1], p[0]))[:max_kb_lines]
    kb_block = (
        "\n".join(f"{correct} | {erroneous}" for correct, erroneous in kb_lines)
        if kb_lines
        else _EMPTY_KB_LINE
    )
    asr_block = "\n".join(
        f"ASR {slot} Output: {nbest.hypotheses[idx].text}"
        for slot, idx in enumerate(order, start=1)
    )
    n = len(nbest.hypotheses)
    rendered = template.text.format(
        model_count=_count_word(n),
        model_count_lower=_count_word(n).lower(),
        context=nbest.context if nbest.context else _EMPTY_CONTEXT,
        kb=kb_block,
        asr_outputs=asr_block,
    )
    return PromptSpec(
        rendered=rendered,
        permutation=tuple(order),
        kb_lines=tuple(kb_lines),
        seed=seed,
        template_version=template.version,
    )


@dataclass(frozen=True)
class SftRecord:
    """One supervised fine-tuning source row."""

    nbest: NBestSet
    kb_pairs: tuple[tuple[str, str], ...]
    reference: str

    def __post_init__(self) -> None:
        if not isinstance(self.kb_pairs, tuple):
            object.__setattr__(self, "kb_pairs", tuple(self.kb_pairs))
        if not self.reference:
            raise DataError("SFT reference text must be nonempty")
        if not self.nbest.utterance_id:
            raise DataError("SFT records need an utterance_id (it seeds the shuffle)")


@dataclass(frozen=True)
class SftExample:
    prompt: str
    target: str


def export_sft(
    records: Iterable[SftRecord],
    template: PromptTemplate | None = None,
    max_kb_lines: int = DEFAULT_MAX_KB_LINES,
) -> Iterator[SftExample]:
    """Turn SFT source rows into {prompt, target} examples.

    Each record's hypothesis shuffle is seeded by a stable hash of its
    utterance_id, so the export is reproducible row-by-row and independent
    of corpus order. Duplicate utterance_ids are an error. The target is
    the reference transcript exactly as given (no brace wrapping).
    """
    seen: set[str] = set()
    for record in records:
        utt_id = record.nbest.utterance_id
        if utt_id in seen:
            raise DataError(f"duplicate utterance_id in SFT export: {utt_id!r}")
        seen.add(utt_id)
        spec = build_prompt(
            record.nbest,
            record.kb_pairs,
            seed=stable_hash64("sft", utt_id),
            template=template,
            max_kb_lines=max_kb_lines,
        )
        yield SftExample(prompt=spec.rendered, target=record.reference)


def write_sft_jsonl(examples: Iterable[SftExample], fp: IO[str]) -> int:
    """Write examples as JSON lines; returns the number written."""
    n = 0
    for ex in examples:
        fp.write(json.dumps({"prompt": ex.prompt, "target": ex.target}, ensure_ascii=False))
        fp.write("\n")
        n += 1
    return n
