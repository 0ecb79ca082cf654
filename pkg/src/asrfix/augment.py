"""Training-data augmentation: text expansion, mock TTS, noise mixing,
and dataset manifest assembly.

The synthetic path is text -> (voice, noise) sampling -> TTS -> SNR-
controlled noise mixing -> WAV + manifest row. Real player recordings are
merged in as rows of their own; only real rows may land in the validation
and test splits, so synthetic audio can never leak into held-out data.

Everything is deterministic given (inputs, seed): the mock TTS is a pure
function of (text, voice), noise offsets derive from stable hashes, and
manifests serialize in a fixed order.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .audio import (
    DEFAULT_SAMPLE_RATE,
    AudioClip,
    convert_rate,
    read_wav,
    resample,
    saturate_to_int16,
    write_wav,
)
from .corpus import UtteranceRecord
from .errors import ConfigError, DataError
from .metrics import normalize
from .seeding import stable_hash64, stable_rng

__all__ = [
    "Provenance",
    "TextItem",
    "TextCorpus",
    "VoiceProfile",
    "OffsetPolicy",
    "NoiseSpec",
    "TtsError",
    "TtsBackend",
    "MockTtsBackend",
    "synthesize",
    "MixResult",
    "mix_noise",
    "ExpansionError",
    "ExpansionBackend",
    "MockExpansionBackend",
    "ExpansionResult",
    "expand_texts",
    "ManifestRow",
    "DatasetManifest",
    "SplitFractions",
    "build_dataset",
    "load_text_corpus",
    "save_text_corpus",
    "load_noise_catalog",
]


# ---------------------------------------------------------------------------
# Text corpus


class Provenance(enum.Enum):
    SEED = "seed"
    LLM_EXPANDED = "llm_expanded"


@dataclass(frozen=True)
class TextItem:
    id: str
    text: str
    tags: tuple[str, ...] = ()
    provenance: Provenance = Provenance.SEED

    def __post_init__(self) -> None:
        if not self.id:
            raise DataError("text item id must be nonempty")
        if not self.text:
            raise DataError(f"text item {self.id!r} has empty text")
        if not isinstance(self.tags, tuple):
            object.__setattr__(self, "tags", tuple(self.tags))


@dataclass(frozen=True)
class TextCorpus:
    items: tuple[TextItem, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.items, tuple):
            object.__setattr__(self, "items", tuple(self.items))
        ids = [item.id for item in self.items]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate text item ids: {dupes}")

    def __len__(self) -> int:
        return len(self.items)


def load_text_corpus(path: str | Path) -> TextCorpus:
    """JSONL rows: {"id", "text", "tags"?, "provenance"?}."""
    items: list[TextItem] = []
    path = Path(path)
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            items.append(
                TextItem(
                    id=row["id"],
                    text=row["text"],
                    tags=tuple(row.get("tags", ())),
                    provenance=Provenance(row.get("provenance", "seed")),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: line {lineno}: bad text corpus row: {exc}") from None
    return TextCorpus(items=tuple(items))


def save_text_corpus(corpus: TextCorpus, path: str | Path) -> None:
    lines = [
        json.dumps(
            {
                "id": item.id,
                "text": item.text,
                "tags": list(item.tags),
                "provenance": item.provenance.value,
            },
            ensure_ascii=False,
        )
        for item in corpus.items
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# ---------------------------------------------------------------------------
# Text expansion


class ExpansionError(Exception):
    """The expansion backend failed entirely."""


class ExpansionBackend(Protocol):
    def expand(self, seed_texts: Sequence[str], how_many: int) -> list[str]:
        ...


class MockExpansionBackend:
    """Returns a canned list of paraphrases; raises when told to fail."""

    def __init__(self, paraphrases: Sequence[str], fail: bool = False) -> None:
        self._paraphrases = list(paraphrases)
        self._fail = fail

    def expand(self, seed_texts: Sequence[str], how_many: int) -> list[str]:
        if self._fail:
            raise ExpansionError("mock expansion backend is configured to fail")
        return list(self._paraphrases)


@dataclass(frozen=True)
class ExpansionResult:
    corpus: TextCorpus
    warning: str | None = None


def expand_texts(
    seed_corpus: TextCorpus,
    backend: ExpansionBackend,
    target_count: int,
) -> ExpansionResult:
    """Grow a seed corpus to target_count items with backend paraphrases.

    Candidates that duplicate an existing item (exact match after scoring
    normalization) are dropped. All seed items are always kept. If the
    backend fails outright, the seeds come back unchanged with a warning
    instead of an exception — augmentation is best-effort.
    """
    if target_count < len(seed_corpus):
        raise ConfigError(
            f"target_count {target_count} is below the seed corpus size {len(seed_corpus)}"
        )
    needed = target_count - len(seed_corpus)
    if needed == 0:
        return ExpansionResult(corpus=seed_corpus)
    try:
        candidates = backend.expand([item.text for item in seed_corpus.items], needed)
    except ExpansionError as exc:
        return ExpansionResult(corpus=seed_corpus, warning=f"expansion backend failed: {exc}")
    seen = {normalize(item.text).chars for item in seed_corpus.items}
    new_items: list[TextItem] = []
    for candidate in candidates:
        text = candidate.strip()
        key = normalize(text).chars
        if not key or key in seen:
            continue
        seen.add(key)
        new_items.append(
            TextItem(
                id=f"ext-{len(new_items) + 1:04d}",
                text=text,
                tags=("expanded",),
                provenance=Provenance.LLM_EXPANDED,
            )
        )
        if len(new_items) == needed:
            break
    warning = None
    if len(new_items) < needed:
        warning = f"expansion produced {len(new_items)} of {needed} requested new texts"
    return ExpansionResult(
        corpus=TextCorpus(items=seed_corpus.items + tuple(new_items)), warning=warning
    )


# ---------------------------------------------------------------------------
# Voices, TTS


@dataclass(frozen=True)
class VoiceProfile:
    """Speaking style knobs for synthesis.

    rate_factor is a speed multiplier applied by resampling (2.0 -> half
    duration); volume_db is a linear gain applied before saturation.
    """

    voice_id: str
    rate_factor: float = 1.0
    volume_db: float = 0.0

    def __post_init__(self) -> None:
        if not self.voice_id:
            raise ConfigError("voice_id must be nonempty")
        if not 0.25 <= self.rate_factor <= 4.0:
            raise ConfigError(f"rate_factor must be within [0.25, 4.0], got {self.rate_factor}")
        if not -40.0 <= self.volume_db <= 12.0:
            raise ConfigError(f"volume_db must be within [-40, 12], got {self.volume_db}")


class TtsError(Exception):
    """The TTS backend failed to render a text."""


class TtsBackend(Protocol):
    def render(self, text: str, voice_id: str, sample_rate: int) -> AudioClip:
        ...


class MockTtsBackend:
    """Deterministic tone-pattern TTS.

    Each character becomes one fixed-length tone whose frequency is a pure
    function of (character, voice_id), so identical (text, voice) always
    produce identical bytes and total duration is proportional to the
    character count.
    """

    base_char_duration = 0.1  # seconds of audio per character
    amplitude = 8000.0

    def __init__(self, fail: bool = False) -> None:
        self._fail = fail

    def render(self, text: str, voice_id: str, sample_rate: int) -> AudioClip:
        if self._fail:
            raise TtsError("mock TTS backend is configured to fail")
        if not text:
            raise TtsError("cannot synthesize empty text")
        samples_per_char = int(round(self.base_char_duration * sample_rate))
        voice_base = 180.0 + (stable_hash64("voice", voice_id) % 8) * 25.0
        segments = []
        t = np.arange(samples_per_char, dtype=np.float64) / sample_rate
        for ch in text:
            freq = voice_base + (ord(ch) % 48) * 12.0
            segments.append(self.amplitude * np.sin(2.0 * math.pi * freq * t))
        wave_data = np.concatenate(segments) if segments else np.zeros(0)
        samples, _ = saturate_to_int16(wave_data)
        return AudioClip(samples, sample_rate)


def synthesize(
    text: str,
    voice: VoiceProfile,
    tts_backend: TtsBackend,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> AudioClip:
    """Render text with a voice: backend audio, then rate stretch, then gain."""
    if not text:
        raise DataError("cannot synthesize empty text")
    try:
        clip = tts_backend.render(text, voice.voice_id, sample_rate)
    except TtsError:
        raise
    except Exception as exc:
        raise TtsError(f"TTS backend failed on text {text[:40]!r}: {exc}") from exc
    if voice.rate_factor != 1.0:
        clip = resample(clip, factor=voice.rate_factor)
    if voice.volume_db != 0.0:
        gain = 10.0 ** (voice.volume_db / 20.0)
        samples, _ = saturate_to_int16(clip.as_float() * gain)
        clip = AudioClip(samples, clip.sample_rate)
    return clip


# ---------------------------------------------------------------------------
# Noise mixing


class OffsetPolicy(enum.Enum):
    RANDOM_SEEDED = "random_seeded"
    START = "start"


@dataclass(frozen=True)
class NoiseSpec:
    """A noise source plus the target SNR to mix it at."""

    noise_id: str
    noise_path: Path | None
    snr_db: float
    offset_policy: OffsetPolicy = OffsetPolicy.RANDOM_SEEDED

    def __post_init__(self) -> None:
        if not self.noise_id:
            raise ConfigError("noise_id must be nonempty")
        if not -5.0 <= self.snr_db <= 30.0:
            raise ConfigError(f"snr_db must be within [-5, 30], got {self.snr_db}")
        if self.noise_path is not None and not isinstance(self.noise_path, Path):
            object.__setattr__(self, "noise_path", Path(self.noise_path))


@dataclass(frozen=True)
class MixResult:
    """A mixed clip plus the pre-sum components behind it.

    noise_scaled holds the exact float noise track that was added, so
    callers can recompute the achieved SNR independently; clipped_samples
    counts how many output samples hit the int16 rails.
    """

    audio: AudioClip
    noise_scaled: np.ndarray
    snr_measured_db: float
    clipped_samples: int
    offset: int


def mix_noise(
    speech: AudioClip,
    noise: AudioClip,
    spec: NoiseSpec,
    seed: int = 0,
) -> MixResult:
    """Add noise to speech at the SNR given by spec.

    The noise is resampled to the speech rate if needed, started at an
    offset chosen by the offset policy, looped or truncated to the speech
    length, and scaled so that 10*log10(P_speech / P_noise) equals
    spec.snr_db, powers being mean squared amplitude over the overlap
    (the full speech window). The sum saturates at the int16 rails.
    """
    if len(speech) == 0:
        raise DataError("cannot mix noise into empty speech")
    if len(noise) == 0:
        raise DataError(f"noise clip {spec.noise_id!r} is empty")
    if noise.sample_rate != speech.sample_rate:
        noise = convert_rate(noise, speech.sample_rate)
        if len(noise) == 0:
            raise DataError(f"noise clip {spec.noise_id!r} is empty after resampling")

    if spec.offset_policy is OffsetPolicy.RANDOM_SEEDED:
        offset = stable_rng("noise-offset", spec.noise_id, seed).randrange(len(noise))
    else:
        offset = 0
    indices = (offset + np.arange(len(speech))) % len(noise)
    noise_track = noise.as_float()[indices]

    speech_f = speech.as_float()
    p_speech = float(np.mean(speech_f**2))
    p_noise = float(np.mean(noise_track**2))
    if p_noise == 0.0:
        raise DataError(
            f"noise clip {spec.noise_id!r} has zero power over the mix window; "
            f"cannot reach a finite SNR of {spec.snr_db} dB"
        )
    if p_speech == 0.0:
        raise DataError("speech clip has zero power; SNR is undefined")

    gain = math.sqrt(p_speech / (p_noise * 10.0 ** (spec.snr_db / 10.0)))
    noise_scaled = noise_track * gain
    mixed, clipped = saturate_to_int16(speech_f + noise_scaled)
    measured = 10.0 * math.log10(p_speech / float(np.mean(noise_scaled**2)))
    return MixResult(
        audio=AudioClip(mixed, speech.sample_rate),
        noise_scaled=noise_scaled,
        snr_measured_db=measured,
        clipped_samples=clipped,
        offset=offset,
    )


def load_noise_catalog(path: str | Path) -> list[NoiseSpec]:
    """JSON array of {noise_id, path, snr_db, offset_policy?}; paths are
    resolved relative to the catalog file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read noise catalog {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise ConfigError(f"{path}: expected a JSON array of noise specs")
    specs = []
    for i, item in enumerate(raw):
        try:
            specs.append(
                NoiseSpec(
                    noise_id=item["noise_id"],
                    noise_path=path.parent / item["path"],
                    snr_db=float(item["snr_db"]),
                    offset_policy=OffsetPolicy(item.get("offset_policy", "random_seeded")),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: noise spec #{i}: {exc}") from None
    return specs


# ---------------------------------------------------------------------------
# Dataset assembly


@dataclass(frozen=True)
class ManifestRow:
    id: str
    text: str
    audio_path: str | None
    voice_id: str | None
    noise_id: str | None
    split: str
    source: str  # "tts" | "player"

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "text": self.text,
                "audio_path": self.audio_path,
                "voice_id": self.voice_id,
                "noise_id": self.noise_id,
                "split": self.split,
                "source": self.source,
            },
            ensure_ascii=False,
        )


@dataclass(frozen=True)
class DatasetManifest:
    rows: tuple[ManifestRow, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.rows, tuple):
            object.__setattr__(self, "rows", tuple(self.rows))
        ids = [row.id for row in self.rows]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate manifest row ids: {dupes}")
        for row in self.rows:
            if row.source == "tts" and row.split != "train":
                raise DataError(
                    f"manifest row {row.id!r}: synthetic audio may only be in the train split"
                )

    def write_jsonl(self, path: str | Path) -> None:
        text = "\n".join(row.to_json() for row in self.rows)
        Path(path).write_text(text + ("\n" if text else ""), encoding="utf-8")


@dataclass(frozen=True)
class SplitFractions:
    """How real (player) rows divide into splits. Synthetic rows are
    always train."""

    train: float = 0.5
    validation: float = 0.25
    test: float = 0.25

    def __post_init__(self) -> None:
        total = self.train + self.validation + self.test
        if any(f < 0 for f in (self.train, self.validation, self.test)):
            raise ConfigError("split fractions must be >= 0")
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {total}")


def _assign_real_splits(
    records: Sequence[UtteranceRecord], fractions: SplitFractions, seed: int
) -> list[str]:
    n = len(records)
    order = list(range(n))
    stable_rng("real-split", seed).shuffle(order)
    n_train = int(round(fractions.train * n))
    n_val = int(round(fractions.validation * n))
    splits = ["test"] * n
    for pos in order[:n_train]:
        splits[pos] = "train"
    for pos in order[n_train : n_train + n_val]:
        splits[pos] = "validation"
    return splits


def build_dataset(
    texts: TextCorpus,
    voices: Sequence[VoiceProfile],
    noises: Sequence[NoiseSpec],
    real: Sequence[UtteranceRecord],
    seed: int,
    out_dir: str | Path,
    tts_backend: TtsBackend | None = None,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    clips_per_text: int = 1,
    split_fractions: SplitFractions | None = None,
) -> DatasetManifest:
    """Render every text to audio, mix noise, and merge real recordings.

    Per synthetic clip, a (voice, noise) pair is sampled with the run seed;
    audio lands under out_dir/audio and the returned manifest references it
    by relative path. Real records keep their own audio paths and are the
    only rows eligible for the validation/test splits.
    """
    if not voices:
        raise ConfigError("need at least one voice profile")
    if clips_per_text < 1:
        raise ConfigError("clips_per_text must be >= 1")
    if tts_backend is None:
        tts_backend = MockTtsBackend()
    if split_fractions is None:
        split_fractions = SplitFractions()
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)

    noise_clips: dict[str, AudioClip] = {}
    for spec in noises:
        if spec.noise_path is None:
            raise ConfigError(f"noise spec {spec.noise_id!r} has no path")
        noise_clips[spec.noise_id] = read_wav(spec.noise_path)

    rng = stable_rng("dataset", seed)
    rows: list[ManifestRow] = []
    for item in texts.items:
        for k in range(clips_per_text):
            voice = rng.choice(list(voices))
            spec = rng.choice(list(noises)) if noises else None
            try:
                clip = synthesize(item.text, voice, tts_backend, sample_rate)
            except TtsError as exc:
                raise DataError(f"TTS failed for text item {item.id!r}: {exc}") from exc
            noise_id = None
            if spec is not None:
                mix = mix_noise(
                    clip,
                    noise_clips[spec.noise_id],
                    spec,
                    seed=stable_hash64(seed, item.id, k),
                )
                clip = mix.audio
                noise_id = spec.noise_id
            row_id = item.id if clips_per_text == 1 else f"{item.id}#{k}"
            filename = f"{row_id.replace('#', '_')}.wav"
            write_wav(clip, audio_dir / filename)
            rows.append(
                ManifestRow(
                    id=row_id,
                    text=item.text,
                    audio_path=f"audio/{filename}",
                    voice_id=voice.voice_id,
                    noise_id=noise_id,
                    split="train",
                    source="tts",
                )
            )

    splits = _assign_real_splits(real, split_fractions, seed)
    for record, split in zip(real, splits):
        rows.append(
            ManifestRow(
                id=record.id,
                text=record.reference,
                audio_path=record.audio_path,
                voice_id=None,
                noise_id=None,
                split=split,
                source="player",
            )
        )
    return DatasetManifest(rows=tuple(rows))
