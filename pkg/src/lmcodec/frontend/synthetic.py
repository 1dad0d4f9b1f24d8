"""Deterministic, small stand-ins for the foundation-model roles.

They keep the interfaces, frame rates and differentiability of the real
models so the full training pipeline can run at desk scale.
"""

from __future__ import annotations

import hashlib
import logging
import math
from contextlib import contextmanager

import numpy as np
import torch
from torch import nn

from lmcodec.dsp import log_mel
from lmcodec.frontend.base import AsrAdapter, PitchTracker, SpeechEncoder, TextLM

logger = logging.getLogger(__name__)


@contextmanager
def seeded(seed: int):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def _stable_seed(*parts) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def sinusoidal_positions(n: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    i = torch.arange(0, dim, 2, dtype=torch.float64)
    angle = pos / (10000.0 ** (i / dim))
    pe = torch.zeros(n, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : dim // 2])
    return pe.to(dtype)


class MelProjectionEncoder(SpeechEncoder):
    """Log-mel filterbank followed by a fixed random projection."""

    def __init__(self, sample_rate: int, dim: int, seed: int, frame_rate: float = 50.0, n_mels: int = 24, name: str = "synthetic-mel"):
        super().__init__()
        self.sample_rate = sample_rate
        self.frame_rate = frame_rate
        self.dim = dim
        self.n_mels = n_mels
        self.name = name
        gen = torch.Generator().manual_seed(_stable_seed("mel-projection", seed, dim))
        proj = torch.randn(n_mels, dim, generator=gen, dtype=torch.float64) / math.sqrt(n_mels)
        self.register_buffer("projection", proj.float())
        self.freeze()

    def forward(self, wave: torch.Tensor) -> torch.Tensor:
        mel = log_mel(wave, self.sample_rate, self.hop, self.n_mels)
        # log(1e-5) ~ -11.5 for silence; centre the typical range near zero
        return torch.matmul((mel + 6.0) / 4.0, self.projection.to(wave.dtype))


class AutocorrelationPitch(PitchTracker):
    """Normalized-autocorrelation F0 tracker at the feature frame rate."""

    def __init__(
        self,
        sample_rate: int,
        frame_rate: float = 50.0,
        fmin: float = 60.0,
        fmax: float = 400.0,
        voicing_threshold: float = 0.45,
        silence_db: float = -50.0,
    ):
        self.sample_rate = sample_rate
        self.frame_rate = frame_rate
        self.fmin = fmin
        self.fmax = fmax
        self.voicing_threshold = voicing_threshold
        self.silence_db = silence_db
        self.name = "autocorrelation-pitch"

    def _frame_f0(self, frame: np.ndarray) -> float:
        frame = frame - frame.mean()
        rms = np.sqrt(np.mean(frame**2))
        if rms <= 10.0 ** (self.silence_db / 20.0):
            return 0.0
        n = frame.size
        spec = np.fft.rfft(frame * np.hanning(n), 2 * n)
        acf = np.fft.irfft(np.abs(spec) ** 2)[:n]
        if acf[0] <= 0:
            return 0.0
        acf = acf / acf[0]
        lo = max(2, int(np.floor(self.sample_rate / self.fmax)))
        hi = min(n - 2, int(np.ceil(self.sample_rate / self.fmin)))
        if hi <= lo:
            return 0.0
        k = lo + int(np.argmax(acf[lo : hi + 1]))
        if acf[k] < self.voicing_threshold:
            return 0.0
        a, b, c = acf[k - 1], acf[k], acf[k + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom < 0 else 0.0
        return float(self.sample_rate / (k + shift))

    def __call__(self, samples: np.ndarray) -> np.ndarray:
        hop = self.hop
        win = 3 * hop
        n = self.n_frames(samples.size)
        padded = np.pad(np.asarray(samples, dtype=np.float64), (hop, win))
        return np.array([self._frame_f0(padded[i * hop : i * hop + win]) for i in range(n)])


class SyntheticAsr(AsrAdapter):
    """Two-layer causal transformer decoder over a differentiable log-mel encoder.

    Weights are drawn once from ``seed`` and frozen. The last two vocabulary
    entries are the begin and end tokens.
    """

    def __init__(self, sample_rate: int, vocab_size: int = 32, dim: int = 32, heads: int = 2, n_mels: int = 20, max_len: int = 16, seed: int = 0):
        super().__init__()
        self.name = "synthetic-asr"
        self.sample_rate = sample_rate
        self.vocab_size = vocab_size
        self.bos, self.eos = vocab_size - 2, vocab_size - 1
        self.max_len = max_len
        self.n_mels = n_mels
        self.dim = dim
        self.hop = sample_rate // 50
        with seeded(_stable_seed("synthetic-asr", seed)):
            self.audio_proj = nn.Linear(n_mels, dim)
            self.embed = nn.Embedding(vocab_size, dim)
            layer = nn.TransformerDecoderLayer(dim, heads, 2 * dim, dropout=0.0, batch_first=True, norm_first=True)
            self.decoder = nn.TransformerDecoder(layer, num_layers=2)
            self.norm = nn.LayerNorm(dim)
            self.head = nn.Linear(dim, vocab_size)
        self.freeze()

    def encode_audio(self, wave: torch.Tensor) -> torch.Tensor:
        mel = log_mel(wave, self.sample_rate, self.hop, self.n_mels)
        mel = (mel - mel.mean(dim=-2, keepdim=True)) / 4.0
        h = self.audio_proj(mel)
        return h + sinusoidal_positions(h.shape[-2], self.dim, h.dtype)

    def forward(self, wave: torch.Tensor, decoder_input: torch.Tensor) -> torch.Tensor:
        memory = self.encode_audio(wave).unsqueeze(0)
        tok = self.embed(decoder_input.long()).to(memory.dtype)
        n = tok.shape[0]
        tok = (tok + sinusoidal_positions(n, self.dim, tok.dtype)).unsqueeze(0)
        mask = torch.triu(torch.full((n, n), float("-inf"), dtype=tok.dtype), diagonal=1)
        h = self.decoder(tok, memory, tgt_mask=mask, tgt_is_causal=True)
        return self.head(self.norm(h))[0]

    def tokenize(self, text: str) -> list[int]:
        n_real = self.vocab_size - 2
        return [_stable_seed("word", w) % n_real for w in text.lower().split()]

    def detokenize(self, tokens) -> str:
        return " ".join(f"t{int(t)}" for t in tokens if int(t) not in self.specials)


class TableAsr(AsrAdapter):
    """Stand-in that emits a fixed token sequence regardless of audio.

    Row ``i`` puts ``margin`` on ``table[i]`` (or on the end token past the
    table) and 0 elsewhere. ``margin=0`` gives uniform distributions.
    """

    def __init__(self, table, vocab_size: int = 16, margin: float = 20.0, sample_rate: int = 16000, max_len: int = 64):
        super().__init__()
        self.name = "table-asr"
        self.table = [int(t) for t in table]
        self.vocab_size = vocab_size
        self.bos, self.eos = vocab_size - 2, vocab_size - 1
        self.margin = margin
        self.sample_rate = sample_rate
        self.max_len = max_len
        self.differentiable = False
        self.freeze()

    def forward(self, wave: torch.Tensor, decoder_input: torch.Tensor) -> torch.Tensor:
        n = decoder_input.shape[0]
        logits = torch.zeros(n, self.vocab_size, dtype=wave.dtype)
        for i in range(n):
            target = self.table[i] if i < len(self.table) else self.eos
            logits[i, target] = self.margin
        return logits


class UniformAsr(TableAsr):
    def __init__(self, vocab_size: int = 16, sample_rate: int = 16000, max_len: int = 64):
        super().__init__([], vocab_size=vocab_size, margin=0.0, sample_rate=sample_rate, max_len=max_len)
        self.name = "uniform-asr"


class HashTextLM(TextLM):
    """Position-free text LM: each token maps to a hash-seeded unit vector.

    If ``vocab`` is given, tokens outside it share the ``[UNK]`` embedding.
    """

    unk = "[UNK]"

    def __init__(self, dim: int, seed: int = 0, vocab=None):
        super().__init__()
        self.name = "hash-text-lm"
        self.dim = dim
        self.seed = seed
        self.vocab = frozenset(vocab) if vocab is not None else None
        self.freeze()

    def _vector(self, token: str) -> np.ndarray:
        rng = np.random.default_rng(_stable_seed("text-lm", self.seed, token))
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def forward(self, tokens: list[str]) -> torch.Tensor:
        rows = []
        for tok in tokens:
            if self.vocab is not None and tok not in self.vocab:
                logger.warning("token %r not in text-LM vocabulary; using %s", tok, self.unk)
                tok = self.unk
            rows.append(self._vector(tok))
        return torch.as_tensor(np.stack(rows), dtype=torch.float32)
