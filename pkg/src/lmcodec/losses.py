"""Language-model-driven codec losses and the semantic-distillation baseline.

* :func:`asr_loss` scores decoded audio with a frozen recognizer, teacher
  forced on the tokens it transcribed from the clean input.
* :func:`ttr_loss` compares per-subword speech embeddings (summarized and
  self-attended) with text-LM embeddings of the script.
* :func:`sd_loss` is the feature-matching baseline on the semantic branch.

Embedding matrices are stored row-major: ``(N, dim)``, one row per subword.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from lmcodec.errors import AlignmentError, FrontendError, ShapeError
from lmcodec.frontend import AsrAdapter, SpeechEncoder, TextLM, TokenSequence
from lmcodec.frontend.synthetic import sinusoidal_positions

# cap on teacher-forced target positions
ASR_MAX_TARGETS = 448


def _frame_index(t_s: float, rate: float, fn) -> int:
    # guard float noise such as 0.3 * 50 = 15.000000000000002
    return int(fn(round(t_s * rate, 9)))


def segment_runs(n_frames: int, frame_rate: float, alignments, tolerance: int = 1) -> list[tuple[int, int]]:
    """Half-open frame ranges ``[floor(start * rate), ceil(end * rate))`` per alignment.

    Ranges are clipped to the available frames; an alignment reaching more
    than ``tolerance`` frames past the end is an error. A range that
    collapses to nothing becomes the single frame nearest its midpoint.
    """
    runs = []
    for a in alignments:
        lo = _frame_index(a.start_s, frame_rate, math.floor)
        hi = _frame_index(a.end_s, frame_rate, math.ceil)
        if hi > n_frames + tolerance:
            raise AlignmentError(
                f"alignment {a.token!r} ends at {a.end_s:.3f} s, beyond the {n_frames / frame_rate:.3f} s of audio"
            )
        lo, hi = min(lo, n_frames), min(hi, n_frames)
        if hi <= lo:
            mid = _frame_index(0.5 * (a.start_s + a.end_s), frame_rate, math.floor)
            lo = min(max(mid, 0), n_frames - 1)
            hi = lo + 1
        runs.append((lo, hi))
    return runs


def segment_embeddings(features: torch.Tensor, frame_rate: float, alignments) -> list[torch.Tensor]:
    """Split (T, D) frame embeddings into one variable-length run per subword."""
    if not alignments:
        raise AlignmentError("no alignments")
    return [features[lo:hi] for lo, hi in segment_runs(features.shape[0], frame_rate, alignments)]


def _encoder(dim: int, ff: int, layers: int, heads: int) -> nn.TransformerEncoder:
    layer = nn.TransformerEncoderLayer(dim, heads, ff, dropout=0.0, batch_first=True, norm_first=True)
    return nn.TransformerEncoder(layer, layers, enable_nested_tensor=False)


class Summarizer(nn.Module):
    """Transformer encoder pooling a variable-length run into one vector.

    A learned query token is prepended to each run; its output is the
    summary. Runs are padded and processed in one batch with a key mask.
    """

    def __init__(self, in_dim: int, dim: int = 768, ff: int = 1024, layers: int = 4, heads: int = 12):
        super().__init__()
        self.in_proj = nn.Linear(in_dim, dim) if in_dim != dim else nn.Identity()
        self.query = nn.Parameter(torch.randn(dim) * 0.02)
        self.encoder = _encoder(dim, ff, layers, heads)
        self.dim = dim

    def forward(self, runs: list[torch.Tensor]) -> torch.Tensor:
        """List of N (m_i, in_dim) runs to an (N, dim) matrix."""
        if any(r.shape[0] == 0 for r in runs):
            raise ShapeError("cannot summarize an empty segment")
        m = max(r.shape[0] for r in runs)
        dtype = runs[0].dtype
        pad = torch.ones(len(runs), m + 1, dtype=torch.bool)
        q = self.query.to(dtype)
        rows = []
        for i, r in enumerate(runs):
            h = self.in_proj(r) + sinusoidal_positions(r.shape[0], self.dim, dtype)
            rows.append(torch.cat([q[None], h, torch.zeros(m - r.shape[0], self.dim, dtype=dtype)]))
            pad[i, : r.shape[0] + 1] = False
        x = torch.stack(rows)
        return self.encoder(x, src_key_padding_mask=pad)[:, 0]


class Aggregator(nn.Module):
    """Length-preserving self-attention over the summary sequence."""

    def __init__(self, dim: int = 768, ff: int = 1024, layers: int = 4, heads: int = 12):
        super().__init__()
        self.encoder = _encoder(dim, ff, layers, heads)
        self.dim = dim

    def forward(self, s: torch.Tensor) -> torch.Tensor:
        if s.ndim != 2 or s.shape[0] < 1:
            raise ShapeError(f"expected (N>=1, {self.dim}) summaries, got {tuple(s.shape)}")
        h = s + sinusoidal_positions(s.shape[0], self.dim, s.dtype)
        return self.encoder(h[None])[0]


class TTRStack(nn.Module):
    """Summarizer plus aggregator, the trainable part of the TTR loss."""

    def __init__(self, in_dim: int, dim: int = 768, ff: int = 1024, layers: int = 4, heads: int = 12):
        super().__init__()
        self.summarizer = Summarizer(in_dim, dim, ff, layers, heads)
        self.aggregator = Aggregator(dim, ff, layers, heads)
        self.config = {"in_dim": in_dim, "dim": dim, "ff": ff, "layers": layers, "heads": heads}

    def forward(self, features: torch.Tensor, frame_rate: float, alignments) -> torch.Tensor:
        """(T, in_dim) speech-LM frames and alignments to the (N, dim) matrix S-bar."""
        return self.aggregator(self.summarizer(segment_embeddings(features, frame_rate, alignments)))


def summarize(model: Summarizer, run: torch.Tensor) -> torch.Tensor:
    if run.ndim != 2 or run.shape[0] < 1:
        raise ShapeError("cannot summarize an empty segment")
    return model([run])[0]


def aggregate(model: Aggregator, s: torch.Tensor) -> torch.Tensor:
    return model(s)


def ttr_loss(s_bar: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    """Timed-text regularizer between (N, d) speech and text embeddings.

    Mean cosine distance of matching rows plus the mean squared difference
    of the two Gram matrices over the upper triangle, diagonal included
    (``N (N + 1) / 2`` pairs).

    Raises:
        ShapeError: mismatched shapes or a zero-norm row.
    """
    if s_bar.shape != t.shape or s_bar.ndim != 2 or s_bar.shape[0] < 1:
        raise ShapeError(f"TTR operands must share shape (N, d), got {tuple(s_bar.shape)} and {tuple(t.shape)}")
    s_norm = s_bar.norm(dim=1)
    t_norm = t.norm(dim=1)
    if bool((s_norm == 0).any()) or bool((t_norm == 0).any()):
        raise ShapeError("cosine similarity is undefined for a zero-norm embedding")
    n = s_bar.shape[0]
    cosine = (s_bar * t).sum(dim=1) / (s_norm * t_norm)
    cos_term = torch.mean(1.0 - cosine)
    diff = s_bar @ s_bar.t() - t @ t.t()
    iu = torch.triu_indices(n, n)
    gram_term = (diff[iu[0], iu[1]] ** 2).sum() * (2.0 / (n * (n + 1)))
    return cos_term + gram_term


def _target_ids(targets, specials) -> list[int]:
    tokens = targets.tokens if isinstance(targets, TokenSequence) else tuple(int(x) for x in targets)
    return [tok for tok in tokens if tok not in specials][:ASR_MAX_TARGETS]


def asr_loss(asr: AsrAdapter, x_hat: torch.Tensor, targets, require_grad: bool = True) -> torch.Tensor:
    """Mean teacher-forced cross entropy of ``asr`` on decoded audio.

    ``targets`` are fixed token ids (normally the greedy transcript of the
    clean input). Begin/end specials are excluded from the average and at
    most ``ASR_MAX_TARGETS`` positions are scored.
    """
    if require_grad and not asr.differentiable:
        raise FrontendError(f"{asr.name} is not differentiable; it cannot drive a training loss")
    ids = _target_ids(targets, asr.specials)
    if not ids:
        raise FrontendError("ASR loss needs at least one target token")
    target = torch.tensor(ids, dtype=torch.long)
    decoder_input = torch.cat([torch.tensor([asr.bos]), target[:-1]])
    logits = asr(x_hat, decoder_input)
    return F.cross_entropy(logits, target)


def sd_loss(features_in: torch.Tensor, features_out: torch.Tensor) -> torch.Tensor:
    """Mean squared error between codec input and reconstructed features."""
    if features_in.shape != features_out.shape:
        raise ShapeError(f"feature shapes differ: {tuple(features_in.shape)} vs {tuple(features_out.shape)}")
    return torch.mean((features_in - features_out) ** 2)


def ttr_codec_loss(
    x_hat: torch.Tensor,
    alignments,
    script: list[str],
    stack: TTRStack,
    speech_lm: SpeechEncoder,
    text_lm: TextLM,
) -> torch.Tensor:
    """TTR loss of decoded audio against the script.

    Segmentation reuses the clean signal's alignment times. Only ``x_hat``
    carries gradient; the text side is computed without autograd.
    """
    if not alignments:
        raise AlignmentError("TTR loss needs alignments")
    if len(script) != len(alignments):
        raise AlignmentError(f"{len(script)} script tokens for {len(alignments)} alignments")
    feats = speech_lm(x_hat)
    s_bar = stack(feats, speech_lm.frame_rate, alignments)
    with torch.no_grad():
        t = text_lm(list(script)).to(s_bar.dtype)
    return ttr_loss(s_bar, t)
