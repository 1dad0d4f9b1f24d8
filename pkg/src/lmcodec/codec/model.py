"""The reference codec: two encoder branches, two VQs, feature decoders and a vocoder."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from lmcodec.audio import AudioClip
from lmcodec.codec.bitstream import CodeStream
from lmcodec.codec.discriminators import (
    Discriminators,
    feature_matching_loss,
    generator_adversarial_loss,
)
from lmcodec.codec.modules import (
    Generator,
    PitchDecoder,
    PitchEncoder,
    SemanticEncoder,
    SemanticFeatureDecoder,
    fuse_branches,
)
from lmcodec.codec.quantizer import VectorQuantizer
from lmcodec.dsp import log_mel
from lmcodec.errors import ShapeError
from lmcodec.frontend import FeatureSequence, Providers, extract_features, extract_pitch
from lmcodec.profiles import CodecProfile

CODEC_GROUPS = (
    "pitch_encoder",
    "pitch_vq",
    "semantic_encoder",
    "semantic_vq",
    "feature_decoders",
    "vocoder",
    "discriminators",
)


@dataclass
class CodecOutput:
    z_semantic: torch.Tensor
    q_semantic: torch.Tensor
    idx_semantic: torch.Tensor
    commit_semantic: torch.Tensor
    flat_semantic: torch.Tensor
    z_pitch: torch.Tensor
    q_pitch: torch.Tensor
    idx_pitch: torch.Tensor
    commit_pitch: torch.Tensor
    flat_pitch: torch.Tensor


class Codec(nn.Module):
    def __init__(self, profile: CodecProfile, seed: int = 0):
        super().__init__()
        self.profile = profile
        p = profile
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.semantic_encoder = SemanticEncoder(p.feature_dim, p.latent_dim, p.semantic_decimation)
            self.pitch_encoder = PitchEncoder(p.latent_dim, p.pitch_decimation)
            self.semantic_vq = VectorQuantizer(p.k_semantic, p.latent_dim, p.vq_decay, p.vq_noise)
            self.pitch_vq = VectorQuantizer(p.k_pitch, p.latent_dim, p.vq_decay, p.vq_noise)
            self.feature_decoders = nn.ModuleDict(
                {
                    "semantic": SemanticFeatureDecoder(p.latent_dim, p.feature_dim, p.semantic_decimation),
                    "pitch": PitchDecoder(p.latent_dim, p.pitch_decimation),
                }
            )
            self.vocoder = Generator(
                2 * p.latent_dim,
                p.gen_channels,
                p.upsample_scales,
                p.upsample_kernels,
                p.resblock_kernels,
                p.resblock_dilations,
            )
            self.discriminators = Discriminators(p.mpd_periods, p.mpd_channels, p.msd_scales, p.msd_channels)
        self.register_buffer("pitch_log_mean", torch.tensor(math.log(150.0)))
        self.register_buffer("pitch_log_std", torch.tensor(0.3))
        if p.samples_per_code * p.semantic_rate != p.sample_rate:
            raise ValueError(
                f"generator hop {p.samples_per_code} does not map {p.semantic_rate} Hz codes to {p.sample_rate} Hz"
            )

    def groups(self) -> dict[str, nn.Module]:
        return {name: getattr(self, name) for name in CODEC_GROUPS}

    # pitch normalization

    @torch.no_grad()
    def fit_pitch_stats(self, f0_arrays) -> None:
        voiced = np.concatenate([np.log(f[f > 0]) for f in f0_arrays])
        if voiced.size >= 2:
            self.pitch_log_mean.fill_(float(voiced.mean()))
            self.pitch_log_std.fill_(float(max(voiced.std(), 1e-3)))

    def pitch_inputs(self, f0: torch.Tensor):
        """(B, T) Hz to (normalized log-F0 with 0 on unvoiced frames, voicing mask)."""
        voiced = f0 > 0
        logf0 = torch.log(torch.where(voiced, f0, torch.ones_like(f0)))
        norm = (logf0 - self.pitch_log_mean.to(f0.dtype)) / self.pitch_log_std.to(f0.dtype)
        return torch.where(voiced, norm, torch.zeros_like(norm)), voiced

    def pitch_targets(self, f0: torch.Tensor) -> torch.Tensor:
        norm, voiced = self.pitch_inputs(f0)
        return torch.stack([norm, voiced.to(norm.dtype)], dim=-1)

    def pitch_to_hz(self, decoded: torch.Tensor) -> torch.Tensor:
        norm, voicing = decoded[..., 0], decoded[..., 1]
        hz = torch.exp(norm * self.pitch_log_std + self.pitch_log_mean)
        return torch.where(voicing > 0.5, hz, torch.zeros_like(hz))

    # forward paths

    def encode_latents(self, feats: torch.Tensor, f0: torch.Tensor) -> CodecOutput:
        """Features (B, T, F) and F0 (B, T) through both encoders and quantizers."""
        z_sem = self.semantic_encoder(feats)
        q_sem, idx_sem, commit_sem, flat_sem = self.semantic_vq(z_sem)
        norm, voiced = self.pitch_inputs(f0)
        z_p = self.pitch_encoder(norm, voiced)
        q_p, idx_p, commit_p, flat_p = self.pitch_vq(z_p)
        return CodecOutput(z_sem, q_sem, idx_sem, commit_sem, flat_sem, z_p, q_p, idx_p, commit_p, flat_p)

    def synthesize(self, q_semantic: torch.Tensor, q_pitch: torch.Tensor) -> torch.Tensor:
        """Quantized latents to (B, samples) waveform."""
        return self.vocoder(fuse_branches(q_semantic, q_pitch, self.profile.pitch_decimation // self.profile.semantic_decimation))[:, 0]

    def mel(self, wave: torch.Tensor) -> torch.Tensor:
        hop = self.profile.feature_hop // 2
        return log_mel(wave, self.profile.sample_rate, hop, self.profile.mel_bins, n_fft=4 * hop)

    # bitstream

    @torch.no_grad()
    def encode(self, clip: AudioClip, providers: Providers) -> CodeStream:
        feats = extract_features(providers.feature, clip)
        f0 = extract_pitch(providers.pitch, clip)
        dtype = next(self.parameters()).dtype
        out = self.encode_latents(
            torch.as_tensor(feats.frames, dtype=dtype)[None],
            torch.as_tensor(f0.values, dtype=dtype)[None],
        )
        p = self.profile
        return CodeStream(
            out.idx_semantic[0].tolist(),
            out.idx_pitch[0].tolist(),
            p.sample_rate,
            p.k_semantic,
            p.k_pitch,
            p.semantic_rate,
            p.pitch_rate,
        )

    @torch.no_grad()
    def decode(self, cs: CodeStream) -> AudioClip:
        p = self.profile
        if (cs.k_semantic, cs.k_pitch, cs.sample_rate) != (p.k_semantic, p.k_pitch, p.sample_rate):
            raise ShapeError(
                f"stream (K={cs.k_semantic}/{cs.k_pitch}, {cs.sample_rate} Hz) does not match codec "
                f"(K={p.k_semantic}/{p.k_pitch}, {p.sample_rate} Hz)"
            )
        q_sem = self.semantic_vq.decode(torch.tensor(cs.semantic_indices, dtype=torch.long)[None])
        q_p = self.pitch_vq.decode(torch.tensor(cs.pitch_indices, dtype=torch.long)[None])
        wave = self.synthesize(q_sem, q_p)[0]
        return AudioClip(wave.double().numpy(), p.sample_rate)

    @torch.no_grad()
    def resynthesize(self, clip: AudioClip, providers: Providers) -> AudioClip:
        out = self.decode(self.encode(clip, providers))
        n = min(len(out), len(clip))
        return out.with_samples(out.samples[:n])


def encode_semantic(codec: Codec, features: FeatureSequence) -> torch.Tensor:
    """(T, F) features to (ceil(T / 2), D) latents."""
    if features.n_frames < 2:
        raise ShapeError("semantic encoding needs at least 2 frames")
    dtype = next(codec.parameters()).dtype
    z = codec.semantic_encoder(torch.as_tensor(features.frames, dtype=dtype)[None])
    return z[0].transpose(0, 1)


def decode_waveform(codec: Codec, q_semantic: torch.Tensor, q_pitch: torch.Tensor) -> AudioClip:
    """(Ts, D) and (Tp, D) quantized latents to audio; gradients are not kept."""
    with torch.no_grad():
        wave = codec.synthesize(q_semantic.transpose(0, 1)[None], q_pitch.transpose(0, 1)[None])
    return AudioClip(wave[0].double().numpy(), codec.profile.sample_rate)


def decode_semantic_features(codec: Codec, q_semantic: torch.Tensor) -> FeatureSequence:
    with torch.no_grad():
        y = codec.feature_decoders["semantic"](q_semantic.transpose(0, 1)[None])
    return FeatureSequence(y[0].double().numpy(), codec.profile.feature_rate, "semantic-decoder")


def crop_pair(x: torch.Tensor, y: torch.Tensor, max_mismatch: int):
    n = min(x.shape[-1], y.shape[-1])
    if abs(x.shape[-1] - y.shape[-1]) > max_mismatch:
        raise ShapeError(f"lengths {x.shape[-1]} and {y.shape[-1]} differ by more than {max_mismatch} samples")
    return x[..., :n], y[..., :n]


def mel_l1(codec: Codec, x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    return torch.mean(torch.abs(codec.mel(x) - codec.mel(x_hat)))


def reconstruction_losses(codec: Codec, x: torch.Tensor, x_hat: torch.Tensor) -> dict:
    """Mel L1, generator adversarial and feature-matching terms (unweighted).

    ``x`` and ``x_hat`` are (B, samples) and are cropped to the shorter one;
    a mismatch beyond one code hop is an error.
    """
    x, x_hat = crop_pair(x, x_hat, codec.profile.samples_per_code)
    real = codec.discriminators(x.unsqueeze(1))
    fake = codec.discriminators(x_hat.unsqueeze(1))
    return {
        "mel_l1": mel_l1(codec, x, x_hat),
        "adversarial": generator_adversarial_loss(fake),
        "feature_matching": feature_matching_loss(real, fake),
    }
