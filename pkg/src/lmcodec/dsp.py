"""Differentiable spectral front ends shared by providers and losses."""

from __future__ import annotations

import functools

import numpy as np
import torch


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=32)
def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-mel filterbank of shape (n_mels, n_fft // 2 + 1)."""
    fmax = sample_rate / 2 if fmax is None else fmax
    bins = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fb = np.zeros((n_mels, bins.size))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (bins - lo) / max(mid - lo, 1e-9)
        down = (hi - bins) / max(hi - mid, 1e-9)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def frame_count(n_samples: int, hop: int) -> int:
    """Frames produced by :func:`log_mel` for ``n_samples`` inputs."""
    return n_samples // hop


def log_mel(
    wave: torch.Tensor,
    sample_rate: int,
    hop: int,
    n_mels: int,
    n_fft: int | None = None,
    eps: float = 1e-5,
) -> torch.Tensor:
    """Log-mel spectrogram with exactly ``len(wave) // hop`` frames.

    ``wave`` is (..., samples); the result is (..., frames, n_mels). The
    Hann window spans two hops (zero-padded to ``n_fft``); the signal is
    padded by ``n_fft - hop`` samples split across both ends, which yields the
    frame count above for any length.
    """
    win = 2 * hop
    n_fft = max(n_fft or win, win)
    pad = (n_fft - hop) // 2
    lead = wave.shape[:-1]
    x = wave.reshape(-1, wave.shape[-1])
    x = torch.nn.functional.pad(x, (pad, n_fft - hop - pad))
    window = torch.hann_window(win, dtype=x.dtype, device=x.device)
    spec = torch.stft(
        x, n_fft=n_fft, hop_length=hop, win_length=win, window=window, center=False, return_complex=True
    )
    power = spec.real**2 + spec.imag**2
    fb = torch.tensor(mel_filterbank(sample_rate, n_fft, n_mels), dtype=x.dtype, device=x.device)
    mel = torch.matmul(fb, power)  # (B, n_mels, frames)
    out = torch.log(mel + eps).transpose(-1, -2)
    n = frame_count(wave.shape[-1], hop)
    return out[:, :n].reshape(*lead, n, n_mels)
