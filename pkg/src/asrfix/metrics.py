"""Character-level transcript scoring.

Normalization plus Levenshtein alignment with a full edit script, and the
two scores built on top of it:

    CER = 100 * (substitutions + deletions + insertions) / reference_chars
    SER = 100 * sentences_with_any_edit / sentences

Corpus CER pools edit counts over all pairs (sum of edits / sum of
reference lengths), which is not the same as averaging per-utterance CERs.
CER can exceed 100 when the hypothesis is much longer than the reference.

The edit script is read as the operations that turn the *hypothesis* into
the *reference*: an extra hypothesis character is a Delete, a missing
reference character is an Insert.
"""

from __future__ import annotations

import enum
import unicodedata
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import DataError

__all__ = [
    "NormalizedText",
    "OpKind",
    "EditOp",
    "EditScript",
    "normalize",
    "align",
    "edit_distance",
    "cer",
    "ser",
    "score_corpus",
    "CorpusScore",
]


@dataclass(frozen=True)
class NormalizedText:
    """A scoring-ready string plus the raw text it came from.

    `chars` is NFC-composed, free of whitespace, and (by default) free of
    Unicode punctuation. All alignment indices refer to positions in
    `chars`, i.e. to Unicode scalar values, not grapheme clusters.
    """

    chars: str
    original: str

    def __len__(self) -> int:
        return len(self.chars)


def _strip_chars(text: str, strip_punctuation: bool) -> str:
    out = []
    for ch in text:
        if ch.isspace():
            continue
        if strip_punctuation and unicodedata.category(ch).startswith("P"):
            continue
        out.append(ch)
    return "".join(out)


def normalize(raw: str, strip_punctuation: bool = True) -> NormalizedText:
    """Normalize raw text for scoring.

    Applies NFC composition and removes whitespace (and punctuation unless
    disabled). Compose/strip is repeated to a fixed point so that removing
    a character never leaves a decomposed pair behind; this makes
    normalize(normalize(x).chars) a no-op.
    """
    text = unicodedata.normalize("NFC", raw)
    for _ in range(8):
        stripped = _strip_chars(text, strip_punctuation)
        stripped = unicodedata.normalize("NFC", stripped)
        if stripped == text:
            break
        text = stripped
    return NormalizedText(chars=text, original=raw)


class OpKind(enum.Enum):
    MATCH = "match"
    SUBSTITUTE = "substitute"
    DELETE = "delete"
    INSERT = "insert"


@dataclass(frozen=True)
class EditOp:
    """One alignment step.

    hyp_index/hyp_char are None for inserts; ref_index/ref_char are None
    for deletes. Indices point into the normalized strings.
    """

    kind: OpKind
    hyp_index: int | None = None
    ref_index: int | None = None
    hyp_char: str | None = None
    ref_char: str | None = None


@dataclass(frozen=True)
class EditScript:
    """A minimal-cost alignment between one hypothesis and one reference."""

    ops: tuple[EditOp, ...]
    s_count: int
    d_count: int
    i_count: int

    @property
    def distance(self) -> int:
        return self.s_count + self.d_count + self.i_count

    def replay(self, hyp: str) -> str:
        """Apply the script to the hypothesis; must reproduce the reference."""
        out = []
        cursor = 0
        for op in self.ops:
            if op.kind is OpKind.MATCH or op.kind is OpKind.SUBSTITUTE:
                if cursor != op.hyp_index or hyp[cursor] != op.hyp_char:
                    raise ValueError("edit script does not fit this hypothesis")
                out.append(op.ref_char)
                cursor += 1
            elif op.kind is OpKind.DELETE:
                if cursor != op.hyp_index or hyp[cursor] != op.hyp_char:
                    raise ValueError("edit script does not fit this hypothesis")
                cursor += 1
            else:  # INSERT
                out.append(op.ref_char)
        if cursor != len(hyp):
            raise ValueError("edit script does not consume the full hypothesis")
        return "".join(out)


def _suffix_distances(hyp: str, ref: str) -> list[list[int]]:
    """dist[i][j] = edit distance between hyp[i:] and ref[j:]."""
    n, m = len(hyp), len(ref)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dist[i][m] = n - i
    for j in range(m + 1):
        dist[n][j] = m - j
    for i in range(n - 1, -1, -1):
        row = dist[i]
        below = dist[i + 1]
        hi = hyp[i]
        for j in range(m - 1, -1, -1):
            if hi == ref[j]:
                row[j] = below[j + 1]
            else:
                row[j] = 1 + min(below[j + 1], below[j], row[j + 1])
    return dist


def _coerce(text: str | NormalizedText, strip_punctuation: bool) -> NormalizedText:
    """Accept raw strings anywhere a NormalizedText is expected."""
    if isinstance(text, NormalizedText):
        return text
    return normalize(text, strip_punctuation=strip_punctuation)


def align(
    hyp: str | NormalizedText,
    ref: str | NormalizedText,
    strip_punctuation: bool = True,
) -> EditScript:
    """Minimal-cost alignment with a deterministic edit script.

    Raw strings are normalized first; NormalizedText is used as-is.
    Ties are broken by scanning the hypothesis left to right and preferring
    Match > Substitute > Delete > Insert, so equal inputs always produce an
    identical script.
    """
    hyp = _coerce(hyp, strip_punctuation)
    ref = _coerce(ref, strip_punctuation)
    h, r = hyp.chars, ref.chars
    n, m = len(h), len(r)
    dist = _suffix_distances(h, r)
    ops: list[EditOp] = []
    s = d = ins = 0
    i = j = 0
    while i < n or j < m:
        cur = dist[i][j]
        if i < n and j < m and h[i] == r[j] and dist[i + 1][j + 1] == cur:
            ops.append(EditOp(OpKind.MATCH, i, j, h[i], r[j]))
            i += 1
            j += 1
        elif i < n and j < m and dist[i + 1][j + 1] + 1 == cur:
            ops.append(EditOp(OpKind.SUBSTITUTE, i, j, h[i], r[j]))
            s += 1
            i += 1
            j += 1
        elif i < n and dist[i + 1][j] + 1 == cur:
            ops.append(EditOp(OpKind.DELETE, i, None, h[i], None))
            d += 1
            i += 1
        else:
            ops.append(EditOp(OpKind.INSERT, None, j, None, r[j]))
            ins += 1
            j += 1
    return EditScript(ops=tuple(ops), s_count=s, d_count=d, i_count=ins)


def edit_distance(a: str, b: str) -> int:
    """Plain Levenshtein distance between two raw strings."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def cer(
    hyp: str | NormalizedText,
    ref: str | NormalizedText,
    strip_punctuation: bool = True,
) -> float:
    """Character error rate, as a percentage of reference length."""
    ref = _coerce(ref, strip_punctuation)
    if len(ref) == 0:
        raise DataError("CER is undefined for an empty reference")
    script = align(hyp, ref, strip_punctuation=strip_punctuation)
    return 100.0 * script.distance / len(ref)


def ser(
    pairs: Sequence[tuple[str | NormalizedText, str | NormalizedText]],
    strip_punctuation: bool = True,
) -> float:
    """Sentence error rate: percentage of pairs with at least one edit."""
    return score_corpus(pairs, strip_punctuation=strip_punctuation).ser


@dataclass(frozen=True)
class CorpusScore:
    """Pooled corpus-level scores plus the totals behind them."""

    cer: float
    ser: float
    total_edits: int
    total_ref_chars: int
    sentences: int
    sentence_errors: int
    s_count: int
    d_count: int
    i_count: int


def score_corpus(
    pairs: Iterable[tuple[str | NormalizedText, str | NormalizedText]],
    strip_punctuation: bool = True,
) -> CorpusScore:
    """Score (hypothesis, reference) pairs as one pooled corpus.

    CER pools edit counts: 100 * sum(edits) / sum(reference lengths).
    """
    total_edits = total_ref = sentences = errors = 0
    s_total = d_total = i_total = 0
    for hyp, ref in pairs:
        hyp = _coerce(hyp, strip_punctuation)
        ref = _coerce(ref, strip_punctuation)
        if len(ref) == 0:
            raise DataError("CER is undefined for an empty reference")
        script = align(hyp, ref)
        total_edits += script.distance
        total_ref += len(ref)
        sentences += 1
        if script.distance > 0:
            errors += 1
        s_total += script.s_count
        d_total += script.d_count
        i_total += script.i_count
    if sentences == 0:
        raise DataError("cannot score an empty corpus")
    return CorpusScore(
        cer=100.0 * total_edits / total_ref,
        ser=100.0 * errors / sentences,
        total_edits=total_edits,
        total_ref_chars=total_ref,
        sentences=sentences,
        sentence_errors=errors,
        s_count=s_total,
        d_count=d_total,
        i_count=i_total,
    )
