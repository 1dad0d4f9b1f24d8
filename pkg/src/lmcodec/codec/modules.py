"""Encoders, feature decoders and the waveform generator."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from lmcodec.errors import ShapeError

LRELU_SLOPE = 0.1


class ResBlock(nn.Module):
    """Dilated residual block shared by both encoder branches."""

    def __init__(self, channels: int, kernel_size: int = 3, dilations=(1, 3)):
        super().__init__()
        self.convs1 = nn.ModuleList(
            nn.Conv1d(channels, channels, kernel_size, dilation=d, padding=d * (kernel_size - 1) // 2) for d in dilations
        )
        self.convs2 = nn.ModuleList(
            nn.Conv1d(channels, channels, kernel_size, padding=(kernel_size - 1) // 2) for _ in dilations
        )

    def forward(self, x):
        for c1, c2 in zip(self.convs1, self.convs2):
            xt = c1(F.leaky_relu(x, LRELU_SLOPE))
            xt = c2(F.leaky_relu(xt, LRELU_SLOPE))
            x = x + xt
        return x


def _downsample(channels: int) -> nn.Conv1d:
    # output length ceil(T / 2)
    return nn.Conv1d(channels, channels, 3, stride=2, padding=1)


class SemanticEncoder(nn.Module):
    """Feature projection (conv1d), residual block and x2 temporal decimation."""

    def __init__(self, in_dim: int, latent_dim: int, decimation: int = 2):
        super().__init__()
        self.in_dim = in_dim
        self.latent_dim = latent_dim
        self.input_proj = nn.Conv1d(in_dim, latent_dim, 3, padding=1)
        self.block = ResBlock(latent_dim)
        self.down = nn.Sequential(*[_downsample(latent_dim) for _ in range(int(math.log2(decimation)))])

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        """(B, T, in_dim) features to (B, latent_dim, ceil(T / 2)) latents."""
        if feats.shape[-1] != self.in_dim:
            raise ShapeError(f"expected feature dim {self.in_dim}, got {feats.shape[-1]}")
        return self.down(self.block(self.input_proj(feats.transpose(1, 2))))


class PitchEncoder(nn.Module):
    """Normalized log-F0 to latents at a quarter of the frame rate.

    Voiced frames are embedded by a 1x1 convolution of the normalized log
    F0; unvoiced frames are replaced by a learned embedding.
    """

    def __init__(self, latent_dim: int, decimation: int = 4):
        super().__init__()
        self.value_proj = nn.Conv1d(1, latent_dim, 1)
        self.unvoiced = nn.Parameter(torch.zeros(latent_dim))
        self.mix = nn.Conv1d(latent_dim, latent_dim, 3, padding=1)
        self.block = ResBlock(latent_dim)
        self.down = nn.Sequential(*[_downsample(latent_dim) for _ in range(int(math.log2(decimation)))])

    def forward(self, norm_logf0: torch.Tensor, voiced: torch.Tensor) -> torch.Tensor:
        """(B, T) normalized log-F0 and voicing mask to (B, D, T / 4) latents."""
        h = self.value_proj(norm_logf0.unsqueeze(1))
        h = torch.where(voiced.unsqueeze(1), h, self.unvoiced[None, :, None].to(h.dtype))
        return self.down(self.block(self.mix(h)))


def _upsample(channels: int, factor: int) -> nn.ConvTranspose1d:
    return nn.ConvTranspose1d(channels, channels, 2 * factor, stride=factor, padding=factor // 2)


class SemanticFeatureDecoder(nn.Module):
    """Latents back to frame features: x2 upsampling, residual block, projection."""

    def __init__(self, latent_dim: int, out_dim: int, upsample: int = 2):
        super().__init__()
        self.up = nn.Sequential(*[_upsample(latent_dim, 2) for _ in range(int(math.log2(upsample)))])
        self.block = ResBlock(latent_dim)
        self.out_proj = nn.Conv1d(latent_dim, out_dim, 3, padding=1)

    def forward(self, q: torch.Tensor, n_frames: int | None = None) -> torch.Tensor:
        """(B, D, T') to (B, 2T', out_dim), cropped to ``n_frames`` if given."""
        y = self.out_proj(self.block(self.up(q))).transpose(1, 2)
        return y if n_frames is None else y[:, :n_frames]


class PitchDecoder(nn.Module):
    """Latents to per-frame (normalized log-F0, voicing) pairs."""

    def __init__(self, latent_dim: int, upsample: int = 4):
        super().__init__()
        self.up = nn.Sequential(*[_upsample(latent_dim, 2) for _ in range(int(math.log2(upsample)))])
        self.block = ResBlock(latent_dim)
        self.out_proj = nn.Conv1d(latent_dim, 2, 3, padding=1)

    def forward(self, q: torch.Tensor, n_frames: int | None = None) -> torch.Tensor:
        y = self.out_proj(self.block(self.up(q))).transpose(1, 2)
        return y if n_frames is None else y[:, :n_frames]


class MRFBlock(nn.Module):
    """Multi-receptive-field fusion: average of residual blocks with different kernels."""

    def __init__(self, channels, kernels, dilations):
        super().__init__()
        self.blocks = nn.ModuleList(ResBlock(channels, k, d) for k, d in zip(kernels, dilations))

    def forward(self, x):
        return sum(b(x) for b in self.blocks) / len(self.blocks)


class Generator(nn.Module):
    """HiFi-GAN-style upsampling generator.

    Produces exactly ``T * prod(upsample_scales)`` samples for ``T`` input
    frames.
    """

    def __init__(self, in_channels, channels, upsample_scales, upsample_kernels, resblock_kernels, resblock_dilations):
        super().__init__()
        self.hop = math.prod(upsample_scales)
        self.input_conv = nn.Conv1d(in_channels, channels, 7, padding=3)
        self.ups = nn.ModuleList()
        self.mrfs = nn.ModuleList()
        ch = channels
        for s, k in zip(upsample_scales, upsample_kernels):
            if k < s or (k - s) % 2:
                raise ValueError(f"upsample kernel {k} incompatible with scale {s}")
            self.ups.append(nn.ConvTranspose1d(ch, ch // 2, k, stride=s, padding=(k - s) // 2))
            ch //= 2
            self.mrfs.append(MRFBlock(ch, resblock_kernels, resblock_dilations))
        self.output_conv = nn.Conv1d(ch, 1, 7, padding=3)
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, (nn.Conv1d, nn.ConvTranspose1d)):
                nn.init.normal_(m.weight, 0.0, 0.01)

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        """(B, in_channels, T) to (B, 1, T * hop) waveform in [-1, 1]."""
        x = self.input_conv(c)
        for up, mrf in zip(self.ups, self.mrfs):
            x = mrf(up(F.leaky_relu(x, LRELU_SLOPE)))
        return torch.tanh(self.output_conv(F.leaky_relu(x)))


def fuse_branches(q_semantic: torch.Tensor, q_pitch: torch.Tensor, ratio: int = 2) -> torch.Tensor:
    """Concatenate semantic latents with nearest-neighbour-upsampled pitch latents.

    Raises:
        ShapeError: frame counts that are not rate-consistent.
    """
    ts, tp = q_semantic.shape[-1], q_pitch.shape[-1]
    if not (ratio * (tp - 1) < ts <= ratio * tp):
        raise ShapeError(f"{tp} pitch frames cannot cover {ts} semantic frames at ratio {ratio}")
    up = torch.repeat_interleave(q_pitch, ratio, dim=-1)[..., :ts]
    return torch.cat([q_semantic, up], dim=1)
