"""Provider interfaces for the frozen foundation-model roles.

Every provider is a frozen ``torch.nn.Module`` (or a plain object for the
non-differentiable pitch tracker). Production adapters wrapping pretrained
checkpoints live in :mod:`lmcodec.frontend.hf` and implement the same
surface as the synthetic stand-ins.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn


class Frozen(nn.Module):
    """Module whose parameters never train and which always runs in eval mode."""

    def freeze(self):
        self.requires_grad_(False)
        self.eval()
        return self

    def train(self, mode: bool = True):
        return super().train(False)


class SpeechEncoder(Frozen):
    """Waveform (samples,) to frame embeddings (T, dim)."""

    name: str = "speech-encoder"
    sample_rate: int
    frame_rate: float
    dim: int

    @property
    def hop(self) -> int:
        return int(round(self.sample_rate / self.frame_rate))

    def n_frames(self, n_samples: int) -> int:
        return n_samples // self.hop

    def forward(self, wave: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError


class AsrAdapter(Frozen):
    """Autoregressive subword recognizer.

    ``forward(wave, decoder_input)`` returns one logit row per decoder input
    position: row ``i`` scores the token that follows ``decoder_input[:i + 1]``.
    Decoder input always starts with ``bos``.
    """

    name: str = "asr"
    vocab_size: int
    bos: int
    eos: int
    sample_rate: int
    max_len: int = 448
    differentiable: bool = True
    decoding: str = "greedy"

    def forward(self, wave: torch.Tensor, decoder_input: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    @property
    def specials(self) -> frozenset:
        return frozenset({self.bos, self.eos})

    def tokenize(self, text: str) -> list[int]:
        raise NotImplementedError(f"{type(self).__name__} has no tokenizer")

    def detokenize(self, tokens) -> str:
        raise NotImplementedError(f"{type(self).__name__} has no detokenizer")


class TextLM(Frozen):
    """Subword strings to an (N, dim) embedding matrix."""

    name: str = "text-lm"
    dim: int

    def forward(self, tokens: list[str]) -> torch.Tensor:
        raise NotImplementedError


class PitchTracker:
    """Per-frame F0 estimator; returns Hz with 0 for unvoiced frames."""

    name: str = "pitch"
    sample_rate: int
    frame_rate: float

    @property
    def hop(self) -> int:
        return int(round(self.sample_rate / self.frame_rate))

    def n_frames(self, n_samples: int) -> int:
        return n_samples // self.hop

    def __call__(self, samples: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def parameter_hash(module: nn.Module) -> str:
    """Digest of every parameter and buffer, for freeze checks."""
    import hashlib

    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
