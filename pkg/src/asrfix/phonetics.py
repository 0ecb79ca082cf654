"""Character-to-syllable lexicon used for homophone lookups.

The on-disk format is one `char<TAB>syllable` pair per line, UTF-8, with
`#` comment lines. Syllables are expected to be tone-stripped (e.g. "yu",
not "yu4"), so two characters are homophones exactly when their syllable
keys are equal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import DataError

__all__ = ["PhoneticLexicon", "load_lexicon"]


@dataclass(frozen=True)
class PhoneticLexicon:
    """Immutable char -> syllable-key mapping with homophone lookup."""

    keys: Mapping[str, str]
    _by_key: Mapping[str, tuple[str, ...]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        grouped: dict[str, list[str]] = {}
        for ch, key in self.keys.items():
            if len(ch) != 1:
                raise DataError(f"lexicon entries must be single characters, got {ch!r}")
            if not key:
                raise DataError(f"empty syllable key for character {ch!r}")
            grouped.setdefault(key, []).append(ch)
        by_key = {k: tuple(sorted(chars)) for k, chars in grouped.items()}
        object.__setattr__(self, "_by_key", by_key)

    def __len__(self) -> int:
        return len(self.keys)

    def key(self, ch: str) -> str | None:
        return self.keys.get(ch)

    def homophones(self, ch: str) -> tuple[str, ...]:
        """All lexicon characters sharing ch's key, excluding ch itself."""
        key = self.keys.get(ch)
        if key is None:
            return ()
        return tuple(c for c in self._by_key[key] if c != ch)

    @property
    def chars(self) -> tuple[str, ...]:
        return tuple(sorted(self.keys))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "PhoneticLexicon":
        return cls(keys=dict(pairs))


def load_lexicon(path: str | Path) -> PhoneticLexicon:
    """Load a char<TAB>syllable lexicon file."""
    keys: dict[str, str] = {}
    path = Path(path)
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}: line {lineno}: expected 'char<TAB>syllable', got {line!r}")
        ch, key = parts[0].strip(), parts[1].strip()
        if len(ch) != 1 or not key:
            raise DataError(f"{path}: line {lineno}: expected 'char<TAB>syllable', got {line!r}")
        keys[ch] = key
    return PhoneticLexicon(keys=keys)
