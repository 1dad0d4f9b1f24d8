"""Mono audio clips, WAV I/O and resampling."""

from __future__ import annotations

import logging
import math
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from lmcodec.errors import AudioError

logger = logging.getLogger(__name__)

CANONICAL_RATE = 16000

# consecutive full-scale PCM codes counted as clipping
_CLIP_RUN = 3


@dataclass(frozen=True, eq=False)
class AudioClip:
    """A mono waveform with its sample rate.

    ``samples`` is a float64 array. Amplitude is only bounded to [-1, 1] on
    load; processed clips (e.g. after a loudness gain) may exceed it.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError(f"expected mono samples, got shape {samples.shape}")
        if samples.size == 0:
            raise AudioError("empty audio")
        if not np.all(np.isfinite(samples)):
            raise AudioError("audio contains non-finite samples")
        if self.sample_rate <= 0:
            raise AudioError(f"invalid sample rate {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate

    def __len__(self) -> int:
        return self.samples.size

    def __eq__(self, other):
        if not isinstance(other, AudioClip):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(self.samples, other.samples)

    def with_samples(self, samples) -> "AudioClip":
        return AudioClip(samples, self.sample_rate)


def resample(samples: np.ndarray, orig_rate: int, target_rate: int) -> np.ndarray:
    """Polyphase resampling; the identity when the rates match."""
    if orig_rate == target_rate:
        return np.asarray(samples, dtype=np.float64)
    g = math.gcd(int(orig_rate), int(target_rate))
    up, down = int(target_rate) // g, int(orig_rate) // g
    out = resample_poly(np.asarray(samples, dtype=np.float64), up, down)
    n_out = int(math.ceil(len(samples) * up / down))
    return out[:n_out]


def resample_clip(clip: AudioClip, target_rate: int) -> AudioClip:
    if clip.sample_rate == target_rate:
        return clip
    return AudioClip(resample(clip.samples, clip.sample_rate, target_rate), target_rate)


def _decode_pcm(raw: bytes, width: int) -> tuple[np.ndarray, int]:
    if width == 1:
        ints = np.frombuffer(raw, dtype=np.uint8).astype(np.int64) - 128
    elif width == 2:
        ints = np.frombuffer(raw, dtype="<i2").astype(np.int64)
    elif width == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int64)
        ints = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
    elif width == 4:
        ints = np.frombuffer(raw, dtype="<i4").astype(np.int64)
    else:
        raise AudioError(f"unsupported sample width {width} bytes")
    full_scale = 1 << (8 * width - 1)
    return ints, full_scale


def _has_clipping(ints: np.ndarray, full_scale: int) -> bool:
    at_rail = (ints >= full_scale - 1) | (ints <= -full_scale)
    if not at_rail.any():
        return False
    run = 0
    for flag in at_rail:
        run = run + 1 if flag else 0
        if run >= _CLIP_RUN:
            return True
    return False


def load_audio(path, target_rate: int = CANONICAL_RATE) -> AudioClip:
    """Read a PCM WAV file as a mono clip at ``target_rate``.

    Multi-channel files are averaged to mono. Files containing a run of
    full-scale samples are rejected as clipped rather than clamped.

    Raises:
        AudioError: missing file, unsupported or undecodable format,
            empty audio, or clipped content.
    """
    path = Path(path)
    if not path.exists():
        raise AudioError(f"no such file: {path}")
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise AudioError(f"cannot decode {path}: {exc}") from exc
    ints, full_scale = _decode_pcm(raw, width)
    if ints.size == 0:
        raise AudioError(f"empty audio in {path}")
    ints = ints.reshape(-1, n_channels)
    if any(_has_clipping(ints[:, c], full_scale) for c in range(n_channels)):
        raise AudioError(f"clipped audio in {path}")
    samples = ints.astype(np.float64).mean(axis=1) / full_scale
    return AudioClip(resample(samples, rate, target_rate), target_rate)


def save_audio(clip: AudioClip, path) -> None:
    """Write a clip as 16-bit PCM; values outside [-1, 1] are clamped."""
    ints = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(clip.sample_rate))
        wf.writeframes(ints.tobytes())


def concatenate(clips: list[AudioClip]) -> AudioClip:
    rates = {c.sample_rate for c in clips}
    if len(rates) != 1:
        raise AudioError(f"cannot concatenate clips with rates {sorted(rates)}")
    return AudioClip(np.concatenate([c.samples for c in clips]), rates.pop())
