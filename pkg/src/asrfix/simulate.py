"""Simulated ASR error channels.

Real game-voice traffic is hard to come by, so evaluation corpora are made
by pushing clean reference texts through per-service noise channels. A
channel applies two stages, fully determined by (profile seed,
utterance id):

1. Term confusion: if the text contains a known confusable term, the whole
   term is replaced by one of its wrong renderings with the profile's hit
   probability. At most one term per utterance is considered, which keeps
   the planted ground truth unambiguous for KB mining tests.
2. Character noise: each character independently draws substitute /
   delete / insert-after / keep. Substitutions prefer a homophone from the
   phonetic lexicon; otherwise a pool character. Insertions draw from the
   pool. The pool defaults to the lexicon's character set, else the
   text's own characters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ConfigError, DataError
from .phonetics import PhoneticLexicon, load_lexicon
from .prompts import Hypothesis, NBestSet
from .seeding import stable_rng

__all__ = ["ChannelProfile", "corrupt", "simulate_nbest", "load_profiles"]


@dataclass(frozen=True)
class ChannelProfile:
    """Noise model for one simulated ASR service.

    term_hit_rate defaults to sub_rate when None; it exists so tests can
    force or suppress the term-confusion stage independently of character
    noise. char_pool, when given, overrides the substitution/insertion
    alphabet.
    """

    source_id: str
    sub_rate: float
    del_rate: float
    ins_rate: float
    seed: int
    lexicon: PhoneticLexicon | None = None
    term_confusions: Mapping[str, tuple[str, ...]] | None = None
    term_hit_rate: float | None = None
    char_pool: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.source_id:
            raise ConfigError("profile source_id must be nonempty")
        rates = (self.sub_rate, self.del_rate, self.ins_rate)
        if any(r < 0 for r in rates) or sum(rates) > 1.0:
            raise ConfigError(
                f"profile {self.source_id!r}: rates must be >= 0 and sum to <= 1, got {rates}"
            )
        if self.term_hit_rate is not None and not 0.0 <= self.term_hit_rate <= 1.0:
            raise ConfigError(f"profile {self.source_id!r}: term_hit_rate must be in [0, 1]")
        if self.term_confusions is not None:
            fixed = {}
            for term, renderings in self.term_confusions.items():
                if not term:
                    raise ConfigError("term confusion keys must be nonempty")
                renderings = tuple(renderings)
                if not renderings or any(not r or r == term for r in renderings):
                    raise ConfigError(
                        f"term {term!r}: renderings must be nonempty and differ from the term"
                    )
                fixed[term] = renderings
            object.__setattr__(self, "term_confusions", fixed)
        if self.char_pool is not None:
            object.__setattr__(self, "char_pool", tuple(self.char_pool))


def _apply_term_confusion(text: str, profile: ChannelProfile, rng) -> str:
    if not profile.term_confusions:
        return text
    hit_rate = profile.term_hit_rate if profile.term_hit_rate is not None else profile.sub_rate
    # Longest terms first so nested terms resolve deterministically; only
    # the first term present is considered (at most one hit per utterance).
    for term in sorted(profile.term_confusions, key=lambda t: (-len(t), t)):
        idx = text.find(term)
        if idx < 0:
            continue
        if rng.random() < hit_rate:
            rendering = rng.choice(profile.term_confusions[term])
            text = text[:idx] + rendering + text[idx + len(term):]
        break
    return text


def _pool_for(text: str, profile: ChannelProfile) -> tuple[str, ...]:
    if profile.char_pool:
        return profile.char_pool
    if profile.lexicon is not None and len(profile.lexicon):
        return profile.lexicon.chars
    return tuple(sorted(set(text)))


def _substitute(ch: str, pool: Sequence[str], profile: ChannelProfile, rng) -> str:
    if profile.lexicon is not None:
        homophones = profile.lexicon.homophones(ch)
        if homophones:
            return rng.choice(homophones)
    candidates = [c for c in pool if c != ch]
    if not candidates:
        return ch
    return rng.choice(candidates)


def corrupt(ref: str, profile: ChannelProfile, utterance_id: str) -> str:
    """Push one reference text through the channel.

    Deterministic in (profile.seed, profile.source_id, utterance_id); the
    same profile never corrupts the same utterance two different ways.
    """
    if not ref:
        raise DataError("cannot corrupt an empty reference")
    rng = stable_rng(profile.seed, profile.source_id, utterance_id)
    text = _apply_term_confusion(ref, profile, rng)
    pool = _pool_for(text, profile)
    sub, dele, ins = profile.sub_rate, profile.del_rate, profile.ins_rate
    out: list[str] = []
    for ch in text:
        draw = rng.random()
        if draw < sub:
            out.append(_substitute(ch, pool, profile, rng))
        elif draw < sub + dele:
            continue
        elif draw < sub + dele + ins:
            out.append(ch)
            if pool:
                out.append(rng.choice(pool))
        else:
            out.append(ch)
    return "".join(out)


def simulate_nbest(
    ref: str,
    profiles: Sequence[ChannelProfile],
    context: str = "",
    utterance_id: str = "",
) -> NBestSet:
    """One corrupted hypothesis per profile, as an n-best set."""
    if not profiles:
        raise ConfigError("need at least one channel profile")
    sources = [p.source_id for p in profiles]
    if len(set(sources)) != len(sources):
        raise ConfigError(f"duplicate source_id among profiles: {sources}")
    return NBestSet(
        hypotheses=tuple(
            Hypothesis(source_id=p.source_id, text=corrupt(ref, p, utterance_id))
            for p in profiles
        ),
        context=context,
        utterance_id=utterance_id,
    )


def load_profiles(path: str | Path, seed_offset: int = 0) -> list[ChannelProfile]:
    """Load channel profiles from a JSON config file.

    Shape: {"profiles": [{source_id, sub_rate, del_rate, ins_rate, seed,
    lexicon_path?, term_confusions_path?, term_hit_rate?, char_pool?}]}.
    Relative paths are resolved against the config file's directory.
    seed_offset is mixed into every profile's seed (the CLI passes its
    --seed here) so one config can drive many independent corpora.
    """
    path = Path(path)
    try:
        config = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read profile config {path}: {exc}") from exc
    raw_profiles = config.get("profiles")
    if not isinstance(raw_profiles, list) or not raw_profiles:
        raise ConfigError(f"{path}: expected a nonempty 'profiles' list")
    profiles: list[ChannelProfile] = []
    for i, item in enumerate(raw_profiles):
        if not isinstance(item, dict):
            raise ConfigError(f"{path}: profile #{i} is not an object")
        try:
            lexicon = None
            if item.get("lexicon_path"):
                lexicon = load_lexicon(path.parent / item["lexicon_path"])
            term_confusions = None
            if item.get("term_confusions_path"):
                raw_map = json.loads(
                    (path.parent / item["term_confusions_path"]).read_text(encoding="utf-8")
                )
                term_confusions = {term: tuple(r) for term, r in raw_map.items()}
            profile = ChannelProfile(
                source_id=item["source_id"],
                sub_rate=float(item["sub_rate"]),
                del_rate=float(item["del_rate"]),
                ins_rate=float(item["ins_rate"]),
                seed=int(item["seed"]) + seed_offset,
                lexicon=lexicon,
                term_confusions=term_confusions,
                term_hit_rate=(
                    float(item["term_hit_rate"]) if item.get("term_hit_rate") is not None else None
                ),
                char_pool=tuple(item["char_pool"]) if item.get("char_pool") else None,
            )
        except KeyError as exc:
            raise ConfigError(f"{path}: profile #{i} is missing field {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: profile #{i}: {exc}") from None
        except DataError as exc:
            raise ConfigError(f"{path}: profile #{i}: {exc}") from None
        profiles.append(profile)
    return profiles
