"""Feature, pitch, ASR and text-LM providers and the operations over them."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from lmcodec.audio import AudioClip
from lmcodec.errors import FrontendError
from lmcodec.frontend.base import AsrAdapter, PitchTracker, SpeechEncoder, TextLM, parameter_hash
from lmcodec.frontend.synthetic import (
    AutocorrelationPitch,
    HashTextLM,
    MelProjectionEncoder,
    SyntheticAsr,
    TableAsr,
    UniformAsr,
)
from lmcodec.frontend.types import FeatureSequence, PitchSequence, TokenSequence
from lmcodec.profiles import TINY, CodecProfile

logger = logging.getLogger(__name__)

__all__ = [
    "AsrAdapter",
    "AutocorrelationPitch",
    "FeatureSequence",
    "HashTextLM",
    "MelProjectionEncoder",
    "PitchSequence",
    "PitchTracker",
    "Providers",
    "SpeechEncoder",
    "SyntheticAsr",
    "TableAsr",
    "TextLM",
    "TokenSequence",
    "UniformAsr",
    "asr_greedy_transcribe",
    "asr_step_logits",
    "extract_features",
    "extract_pitch",
    "make_synthetic_providers",
    "parameter_hash",
    "text_embed",
]


def _check_rate(clip: AudioClip, rate: int, who: str):
    if clip.sample_rate != rate:
        raise FrontendError(f"{who} expects {rate} Hz audio, got {clip.sample_rate} Hz")


def extract_features(provider: SpeechEncoder, clip: AudioClip) -> FeatureSequence:
    _check_rate(clip, provider.sample_rate, provider.name)
    if provider.n_frames(len(clip)) < 1:
        raise FrontendError(f"clip of {len(clip)} samples is shorter than one {provider.name} frame")
    with torch.no_grad():
        frames = provider(torch.as_tensor(clip.samples, dtype=torch.float32))
    return FeatureSequence(frames.double().numpy(), provider.frame_rate, provider.name)


def extract_pitch(tracker: PitchTracker, clip: AudioClip) -> PitchSequence:
    _check_rate(clip, tracker.sample_rate, tracker.name)
    if tracker.n_frames(len(clip)) < 1:
        raise FrontendError(f"clip of {len(clip)} samples is shorter than one {tracker.name} frame")
    return PitchSequence(tracker(clip.samples), tracker.frame_rate)


def _wave_tensor(audio, dtype=torch.float32) -> torch.Tensor:
    if isinstance(audio, AudioClip):
        return torch.as_tensor(audio.samples, dtype=dtype)
    return audio


def asr_step_logits(asr: AsrAdapter, audio, prefix, requires_grad: bool = False) -> torch.Tensor:
    """Teacher-forced next-token logits.

    Returns ``len(prefix) + 1`` rows; row ``i`` is the distribution for the
    token at position ``i`` given ``prefix[:i]``. ``audio`` is an
    :class:`AudioClip` or a waveform tensor (kept in the autograd graph).
    """
    if requires_grad and not asr.differentiable:
        raise FrontendError(f"{asr.name} is not differentiable with respect to audio")
    if isinstance(audio, AudioClip):
        _check_rate(audio, asr.sample_rate, asr.name)
    tokens = prefix.tokens if isinstance(prefix, TokenSequence) else tuple(int(t) for t in prefix)
    bad = [t for t in tokens if not 0 <= t < asr.vocab_size]
    if bad:
        raise FrontendError(f"prefix tokens {bad} outside vocabulary")
    decoder_input = torch.tensor((asr.bos,) + tokens, dtype=torch.long)
    return asr(_wave_tensor(audio), decoder_input)


def asr_greedy_transcribe(asr: AsrAdapter, audio, max_len: int | None = None) -> TokenSequence:
    """Greedy autoregressive decode until the end token or ``max_len`` tokens."""
    max_len = asr.max_len if max_len is None else max_len
    if isinstance(audio, AudioClip):
        _check_rate(audio, asr.sample_rate, asr.name)
    wave = _wave_tensor(audio).detach()
    out: list[int] = []
    truncated = True
    with torch.no_grad():
        while len(out) < max_len:
            decoder_input = torch.tensor([asr.bos] + out, dtype=torch.long)
            nxt = int(torch.argmax(asr(wave, decoder_input)[-1]))
            if nxt == asr.eos:
                truncated = False
                break
            out.append(nxt)
    if truncated:
        logger.debug("greedy decode truncated at %d tokens", max_len)
    return TokenSequence(tuple(out), asr.vocab_size, truncated=truncated)


def text_embed(text_lm: TextLM, tokens: list[str]) -> torch.Tensor:
    if not tokens:
        raise FrontendError("cannot embed an empty token list")
    with torch.no_grad():
        return text_lm(list(tokens))


@dataclass
class Providers:
    feature: SpeechEncoder
    pitch: PitchTracker
    asr: AsrAdapter
    text_lm: TextLM
    ttr_speech: SpeechEncoder


def make_synthetic_providers(seed: int = 0, profile: CodecProfile = TINY) -> Providers:
    sr = profile.sample_rate
    return Providers(
        feature=MelProjectionEncoder(sr, profile.feature_dim, seed, profile.feature_rate, name="synthetic-features"),
        pitch=AutocorrelationPitch(sr, profile.feature_rate),
        asr=SyntheticAsr(
            sr,
            vocab_size=profile.asr_vocab,
            dim=profile.asr_dim,
            heads=profile.asr_heads,
            n_mels=profile.asr_mels,
            max_len=profile.asr_max_len,
            seed=seed,
        ),
        text_lm=HashTextLM(profile.ttr_dim, seed),
        ttr_speech=MelProjectionEncoder(sr, profile.ttr_dim, seed + 7919, profile.feature_rate, name="synthetic-ttr-speech"),
    )
