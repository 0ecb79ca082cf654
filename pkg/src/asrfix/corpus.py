"""Utterance corpus: the JSONL interchange format between tools.

One row per utterance:

    {"id": "...", "reference": "...", "context": "...",
     "hypotheses": [{"source_id": "...", "text": "..."}, ...],
     "audio_path": "..."}        # audio_path optional

`reference` is the ground-truth transcript; `hypotheses` holds one
transcript per ASR source. The same format feeds evaluation, KB mining
and SFT export.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError
from .prompts import Hypothesis, NBestSet

__all__ = ["UtteranceRecord", "load_corpus", "save_corpus"]


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    reference: str
    hypotheses: tuple[Hypothesis, ...] = ()
    context: str = ""
    audio_path: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise DataError("utterance id must be nonempty")
        if not self.reference:
            raise DataError(f"utterance {self.id!r} has an empty reference")
        if not isinstance(self.hypotheses, tuple):
            object.__setattr__(self, "hypotheses", tuple(self.hypotheses))
        sources = [h.source_id for h in self.hypotheses]
        if len(set(sources)) != len(sources):
            raise DataError(f"utterance {self.id!r} has duplicate hypothesis sources")

    def nbest(self) -> NBestSet:
        if not self.hypotheses:
            raise DataError(f"utterance {self.id!r} has no hypotheses")
        return NBestSet(
            hypotheses=self.hypotheses, context=self.context, utterance_id=self.id
        )

    def to_json(self) -> str:
        row = {
            "id": self.id,
            "reference": self.reference,
            "hypotheses": [
                {"source_id": h.source_id, "text": h.text} for h in self.hypotheses
            ],
            "context": self.context,
        }
        if self.audio_path is not None:
            row["audio_path"] = self.audio_path
        return json.dumps(row, ensure_ascii=False)


def load_corpus(path: str | Path) -> list[UtteranceRecord]:
    """Read a corpus JSONL file; ids must be unique."""
    path = Path(path)
    records: list[UtteranceRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except ValueError as exc:
            raise DataError(f"{path}: line {lineno}: invalid JSON: {exc}") from None
        try:
            record = UtteranceRecord(
                id=row["id"],
                reference=row["reference"],
                hypotheses=tuple(
                    Hypothesis(source_id=h["source_id"], text=h["text"])
                    for h in row.get("hypotheses", ())
                ),
                context=row.get("context", ""),
                audio_path=row.get("audio_path"),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}: line {lineno}: bad corpus row: {exc}") from None
        except DataError as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from None
        if record.id in seen:
            raise DataError(f"{path}: line {lineno}: duplicate utterance id {record.id!r}")
        seen.add(record.id)
        records.append(record)
    if not records:
        raise DataError(f"{path}: corpus is empty")
    return records


def save_corpus(records: Iterable[UtteranceRecord], path: str | Path) -> None:
    lines = [record.to_json() for record in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
