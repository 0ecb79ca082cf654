"""Minimal mono 16-bit PCM audio support.

Everything downstream (mock TTS, noise mixing, dataset building) works on
AudioClip: a 1-D int16 sample array plus a sample rate from a fixed set.
Files are plain RIFF/WAVE via the stdlib wave module; float math happens
in float64 and is brought back to int16 with hard saturation, never
wrap-around.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = [
    "ALLOWED_SAMPLE_RATES",
    "DEFAULT_SAMPLE_RATE",
    "AudioClip",
    "saturate_to_int16",
    "resample",
    "convert_rate",
    "apply_gain_db",
    "read_wav",
    "write_wav",
]

ALLOWED_SAMPLE_RATES = (8000, 16000, 22050, 44100)
DEFAULT_SAMPLE_RATE = 16000

_I16_MIN = -32768
_I16_MAX = 32767


@dataclass(frozen=True)
class AudioClip:
    """Mono 16-bit PCM audio."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    channels: int = 1

    def __post_init__(self) -> None:
        if self.channels != 1:
            raise DataError(f"only mono audio is supported, got {self.channels} channels")
        if self.sample_rate not in ALLOWED_SAMPLE_RATES:
            raise DataError(
                f"sample_rate must be one of {ALLOWED_SAMPLE_RATES}, got {self.sample_rate}"
            )
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise DataError(f"samples must be 1-D, got shape {samples.shape}")
        if samples.dtype != np.int16:
            raise DataError(f"samples must be int16, got {samples.dtype}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def as_float(self) -> np.ndarray:
        return self.samples.astype(np.float64)


def saturate_to_int16(values: np.ndarray) -> tuple[np.ndarray, int]:
    """Round float samples to int16 with hard saturation.

    Returns (samples, clipped_count) where clipped_count is the number of
    samples that hit the rails.
    """
    rounded = np.rint(values)
    clipped = int(np.count_nonzero((rounded < _I16_MIN) | (rounded > _I16_MAX)))
    return np.clip(rounded, _I16_MIN, _I16_MAX).astype(np.int16), clipped


def resample(clip: AudioClip, target_length: int | None = None, factor: float | None = None) -> AudioClip:
    """Linear-interpolation resample to a target length (or by a speed
    factor: factor 2.0 halves the duration). Sample rate metadata is kept —
    this is a time-stretch, not a rate conversion."""
    if (target_length is None) == (factor is None):
        raise DataError("give exactly one of target_length / factor")
    n = len(clip.samples)
    if factor is not None:
        if factor <= 0:
            raise DataError("resample factor must be > 0")
        target_length = int(round(n / factor))
    assert target_length is not None
    if target_length < 0:
        raise DataError("target_length must be >= 0")
    if target_length == n:
        return clip
    if n == 0 or target_length == 0:
        return AudioClip(np.zeros(target_length, dtype=np.int16), clip.sample_rate)
    src = clip.as_float()
    positions = np.linspace(0.0, n - 1, num=target_length)
    out = np.interp(positions, np.arange(n), src)
    samples, _ = saturate_to_int16(out)
    return AudioClip(samples, clip.sample_rate)


def convert_rate(clip: AudioClip, target_rate: int) -> AudioClip:
    """Resample to a different sample rate, preserving duration."""
    if target_rate == clip.sample_rate:
        return clip
    if target_rate not in ALLOWED_SAMPLE_RATES:
        raise DataError(f"sample_rate must be one of {ALLOWED_SAMPLE_RATES}, got {target_rate}")
    target_length = int(round(len(clip.samples) * target_rate / clip.sample_rate))
    stretched = resample(clip, target_length=target_length)
    return AudioClip(stretched.samples, target_rate)


def apply_gain_db(clip: AudioClip, gain_db: float) -> tuple[AudioClip, int]:
    """Scale by a dB gain (linear factor 10^(dB/20)) with hard saturation.
    Returns (clip, clipped_count). A gain of 0 dB is bit-exact identity."""
    gain = 10.0 ** (gain_db / 20.0)
    samples, clipped = saturate_to_int16(clip.as_float() * gain)
    return AudioClip(samples, clip.sample_rate), clipped


def read_wav(path: str | Path) -> AudioClip:
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wav:
            channels = wav.getnchannels()
            width = wav.getsampwidth()
            rate = wav.getframerate()
            frames = wav.readframes(wav.getnframes())
    except (OSError, wave.Error) as exc:
        raise DataError(f"cannot read WAV file {path}: {exc}") from exc
    if channels != 1:
        raise DataError(f"{path}: only mono WAV files are supported, got {channels} channels")
    if width != 2:
        raise DataError(f"{path}: only 16-bit PCM is supported, got {8 * width}-bit")
    samples = np.frombuffer(frames, dtype="<i2").astype(np.int16)
    return AudioClip(samples, rate)


def write_wav(clip: AudioClip, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(clip.sample_rate)
        wav.writeframes(clip.samples.astype("<i2").tobytes())
