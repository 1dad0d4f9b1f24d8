from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lmcodec.errors import FrontendError


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """Frame-level embeddings, ``frames`` of shape (T, D)."""

    frames: np.ndarray
    frame_rate: float
    provenance: str = ""

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise FrontendError(f"feature frames must be (T>=1, D), got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise FrontendError("non-finite feature values")
        if self.frame_rate <= 0:
            raise FrontendError("frame_rate must be positive")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True, eq=False)
class PitchSequence:
    """Per-frame F0 in Hz; 0 marks an unvoiced frame."""

    values: np.ndarray
    frame_rate: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or not np.all(np.isfinite(values)) or np.any(values < 0):
            raise FrontendError("pitch values must be a finite non-negative 1-D array")
        object.__setattr__(self, "values", values)

    @property
    def voiced(self) -> np.ndarray:
        return self.values > 0


@dataclass(frozen=True)
class TokenSequence:
    """Subword indices without begin/end specials.

    ``truncated`` is set when greedy decoding hit the length cap before
    emitting the end token.
    """

    tokens: tuple
    vocab_size: int
    truncated: bool = False

    def __post_init__(self):
        tokens = tuple(int(t) for t in self.tokens)
        bad = [t for t in tokens if not 0 <= t < self.vocab_size]
        if bad:
            raise FrontendError(f"token indices {bad} outside [0, {self.vocab_size})")
        object.__setattr__(self, "tokens", tokens)

    def __len__(self) -> int:
        return len(self.tokens)
