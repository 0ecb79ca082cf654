"""Terminology knowledge base: mined (correct, erroneous) span pairs.

Pairs come from three places: offline mining of aligned (hypothesis,
reference) corpora, operator edits, and generated homophone variants.
Retrieval is plain substring matching of the erroneous side against
incoming hypotheses — game vocabularies are small enough that an index
fancier than a dict would be overhead.

Readers get immutable snapshots; every mutation builds and atomically
publishes a new snapshot with a bumped revision, so a request that grabbed
a snapshot keeps a consistent view while edits land concurrently.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DataError
from .metrics import EditScript, NormalizedText, OpKind, align
from .phonetics import PhoneticLexicon

__all__ = [
    "Source",
    "Variant",
    "TermEntry",
    "MinedPair",
    "KbSnapshot",
    "KnowledgeBase",
    "mine_pairs",
    "mine_corpus_pairs",
    "gen_phonetic_variants",
    "load_kb",
    "save_kb",
]

_FORBIDDEN = ("|", "\n", "\r")


class Source(enum.Enum):
    MINED = "mined"
    MANUAL = "manual"
    RUNTIME = "runtime"
    PHONETIC_GEN = "phonetic_gen"


@dataclass(frozen=True)
class Variant:
    """One erroneous rendering of a correct term."""

    erroneous: str
    source: Source
    count: int = 1


@dataclass(frozen=True)
class TermEntry:
    """A correct term plus every erroneous rendering seen for it."""

    correct: str
    variants: Mapping[str, Variant]  # keyed by erroneous string


@dataclass(frozen=True)
class MinedPair:
    """One contiguous error region extracted from an alignment.

    correct_span is the reference side, error_span the hypothesis side;
    ranges are half-open index intervals into the normalized strings.
    """

    correct_span: str
    error_span: str
    hyp_range: tuple[int, int]
    ref_range: tuple[int, int]
    utterance_id: str = ""


def _validate_pair(correct: str, erroneous: str) -> None:
    if not correct or not erroneous:
        raise DataError("KB pair sides must be nonempty")
    if correct == erroneous:
        raise DataError(f"KB pair sides must differ, got {correct!r} twice")
    for s in (correct, erroneous):
        for ch in _FORBIDDEN:
            if ch in s:
                raise DataError(f"KB strings may not contain {ch!r}: {s!r}")


@dataclass(frozen=True)
class KbSnapshot:
    """An immutable, consistent view of the KB at one revision."""

    entries: Mapping[str, TermEntry]
    revision: int
    variant_index: Mapping[str, tuple[str, ...]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        index: dict[str, set[str]] = {}
        for correct, entry in self.entries.items():
            for erroneous in entry.variants:
                index.setdefault(erroneous, set()).add(correct)
        frozen = {err: tuple(sorted(corrects)) for err, corrects in index.items()}
        object.__setattr__(self, "variant_index", frozen)

    def __len__(self) -> int:
        return sum(len(e.variants) for e in self.entries.values())

    def retrieve(self, hypotheses: Sequence[str]) -> list[tuple[str, str]]:
        """All (correct, erroneous) pairs whose erroneous side occurs in any
        hypothesis, deduplicated, longest erroneous string first (then
        lexicographic) so downstream replacement sees longest matches first."""
        hits: set[tuple[str, str]] = set()
        for erroneous, corrects in self.variant_index.items():
            if any(erroneous in hyp for hyp in hypotheses):
                for correct in corrects:
                    hits.add((correct, erroneous))
        return sorted(hits, key=lambda p: (-len(p[1]), p[1], p[0]))


class KnowledgeBase:
    """Mutable KB handle. Mutations are serialized under a lock and publish
    a fresh immutable snapshot; `snapshot()` is safe from any thread."""

    def __init__(self, entries: Mapping[str, TermEntry] | None = None) -> None:
        self._lock = threading.Lock()
        self._snapshot = KbSnapshot(entries=dict(entries or {}), revision=0)

    def snapshot(self) -> KbSnapshot:
        return self._snapshot

    @property
    def revision(self) -> int:
        return self._snapshot.revision

    def retrieve(self, hypotheses: Sequence[str]) -> list[tuple[str, str]]:
        return self._snapshot.retrieve(hypotheses)

    def add_entry(
        self,
        correct: str,
        erroneous: str,
        source: Source = Source.MANUAL,
        count: int = 1,
    ) -> int:
        """Add (or merge, summing counts) one variant. Returns the new revision."""
        _validate_pair(correct, erroneous)
        if count < 1:
            raise DataError("variant count must be >= 1")
        with self._lock:
            snap = self._snapshot
            entries = dict(snap.entries)
            entry = entries.get(correct)
            if entry is None:
                variants: dict[str, Variant] = {}
            else:
                variants = dict(entry.variants)
            existing = variants.get(erroneous)
            if existing is None:
                variants[erroneous] = Variant(erroneous=erroneous, source=source, count=count)
            else:
                variants[erroneous] = replace(existing, count=existing.count + count)
            entries[correct] = TermEntry(correct=correct, variants=variants)
            self._snapshot = KbSnapshot(entries=entries, revision=snap.revision + 1)
            return self._snapshot.revision

    def add_pairs(
        self, pairs: Iterable[tuple[str, str]], source: Source = Source.MINED
    ) -> int:
        """Add many (correct, erroneous) pairs as one mutation (one revision)."""
        pairs = list(pairs)
        for correct, erroneous in pairs:
            _validate_pair(correct, erroneous)
        with self._lock:
            snap = self._snapshot
            entries = dict(snap.entries)
            for correct, erroneous in pairs:
                entry = entries.get(correct)
                variants = dict(entry.variants) if entry else {}
                existing = variants.get(erroneous)
                if existing is None:
                    variants[erroneous] = Variant(erroneous=erroneous, source=source)
                else:
                    variants[erroneous] = replace(existing, count=existing.count + 1)
                entries[correct] = TermEntry(correct=correct, variants=variants)
            self._snapshot = KbSnapshot(entries=entries, revision=snap.revision + 1)
            return self._snapshot.revision

    def remove_entry(self, correct: str, erroneous: str) -> int:
        """Remove one variant (and its term entry if that was the last one)."""
        with self._lock:
            snap = self._snapshot
            entry = snap.entries.get(correct)
            if entry is None or erroneous not in entry.variants:
                raise KeyError(f"no KB entry {correct!r} | {erroneous!r}")
            entries = dict(snap.entries)
            variants = dict(entry.variants)
            del variants[erroneous]
            if variants:
                entries[correct] = TermEntry(correct=correct, variants=variants)
            else:
                del entries[correct]
            self._snapshot = KbSnapshot(entries=entries, revision=snap.revision + 1)
            return self._snapshot.revision


def mine_pairs(
    hyp: NormalizedText,
    ref: NormalizedText,
    max_span_chars: int = 3,
    utterance_id: str = "",
    script: EditScript | None = None,
) -> list[MinedPair]:
    """Extract candidate (correct_span, error_span) pairs from one alignment.

    Contiguous runs of non-match operations form maximal error regions; a
    region whose operation count fits within max_span_chars becomes a
    candidate pair. Regions with an empty side (pure boundary insertions or
    deletions) are dropped: a variant that matches the empty string would
    fire everywhere at retrieval time.
    """
    if max_span_chars < 1:
        raise DataError("max_span_chars must be >= 1")
    if script is None:
        script = align(hyp, ref)
    pairs: list[MinedPair] = []
    hi = ri = 0
    region_ops = 0
    region_hyp: list[str] = []
    region_ref: list[str] = []
    region_start_h = region_start_r = 0

    def flush(end_h: int, end_r: int) -> None:
        nonlocal region_ops
        if region_ops == 0:
            return
        error_span = "".join(region_hyp)
        correct_span = "".join(region_ref)
        if (
            region_ops <= max_span_chars
            and error_span
            and correct_span
            and error_span != correct_span
        ):
            pairs.append(
                MinedPair(
                    correct_span=correct_span,
                    error_span=error_span,
                    hyp_range=(region_start_h, end_h),
                    ref_range=(region_start_r, end_r),
                    utterance_id=utterance_id,
                )
            )
        region_ops = 0
        region_hyp.clear()
        region_ref.clear()

    for op in script.ops:
        if op.kind is OpKind.MATCH:
            flush(hi, ri)
            hi += 1
            ri += 1
            continue
        if region_ops == 0:
            region_start_h, region_start_r = hi, ri
        region_ops += 1
        if op.kind is OpKind.SUBSTITUTE:
            region_hyp.append(op.hyp_char)
            region_ref.append(op.ref_char)
            hi += 1
            ri += 1
        elif op.kind is OpKind.DELETE:
            region_hyp.append(op.hyp_char)
            hi += 1
        else:  # INSERT
            region_ref.append(op.ref_char)
            ri += 1
    flush(hi, ri)
    return pairs


def mine_corpus_pairs(
    pairs: Iterable[tuple[NormalizedText, NormalizedText, str]],
    max_span_chars: int = 3,
    min_support: int = 2,
) -> dict[tuple[str, str], int]:
    """Mine many (hyp, ref, utterance_id) triples and aggregate pair counts,
    keeping only pairs seen at least min_support times."""
    if min_support < 1:
        raise DataError("min_support must be >= 1")
    counts: dict[tuple[str, str], int] = {}
    for hyp, ref, utt_id in pairs:
        for mined in mine_pairs(hyp, ref, max_span_chars=max_span_chars, utterance_id=utt_id):
            key = (mined.correct_span, mined.error_span)
            counts[key] = counts.get(key, 0) + 1
    return {key: n for key, n in counts.items() if n >= min_support}


def gen_phonetic_variants(
    term: str,
    lexicon: PhoneticLexicon,
    candidate_chars: Iterable[str],
) -> list[str]:
    """Single-character homophone swaps of a term.

    Walks term positions left to right; at each position, every candidate
    character (in sorted order) that shares the phonetic key of the
    original character yields one variant. The term itself is never
    returned, and the output order is deterministic.
    """
    if not term:
        raise DataError("term must be nonempty")
    pool = sorted(set(candidate_chars))
    variants: list[str] = []
    for i, ch in enumerate(term):
        key = lexicon.key(ch)
        if key is None:
            continue
        for cand in pool:
            if cand != ch and lexicon.key(cand) == key:
                variant = term[:i] + cand + term[i + 1 :]
                if variant != term:
                    variants.append(variant)
    return variants


def load_kb(path: str | Path, default_source: Source = Source.MANUAL) -> KnowledgeBase:
    """Load a pipe-separated KB file.

    Lines are `correct | erroneous` with an optional `| count` third field;
    `#` lines and blank lines are ignored. Duplicate pairs merge by summing
    counts. Any malformed line raises DataError naming the line number.
    """
    path = Path(path)
    merged: dict[str, dict[str, Variant]] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split("|")]
        if len(fields) not in (2, 3):
            raise DataError(f"{path}: line {lineno}: expected 'correct | erroneous[ | count]'")
        correct, erroneous = fields[0], fields[1]
        count = 1
        if len(fields) == 3:
            try:
                count = int(fields[2])
            except ValueError:
                raise DataError(f"{path}: line {lineno}: count is not an integer") from None
            if count < 1:
                raise DataError(f"{path}: line {lineno}: count must be >= 1")
        try:
            _validate_pair(correct, erroneous)
        except DataError as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from None
        variants = merged.setdefault(correct, {})
        existing = variants.get(erroneous)
        if existing is None:
            variants[erroneous] = Variant(erroneous=erroneous, source=default_source, count=count)
        else:
            variants[erroneous] = replace(existing, count=existing.count + count)
    entries = {
        correct: TermEntry(correct=correct, variants=variants)
        for correct, variants in merged.items()
    }
    return KnowledgeBase(entries=entries)


def save_kb(kb: KnowledgeBase | KbSnapshot, path: str | Path) -> None:
    """Write the KB in the pipe-separated format, deterministically sorted."""
    snap = kb.snapshot() if isinstance(kb, KnowledgeBase) else kb
    lines = []
    for correct in sorted(snap.entries):
        entry = snap.entries[correct]
        for erroneous in sorted(entry.variants):
            variant = entry.variants[erroneous]
            lines.append(f"{correct} | {erroneous} | {variant.count}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
