"""EMA vector quantizer with straight-through gradients and dead-code reinit."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from lmcodec.errors import ShapeError

EMA_EPS = 1e-5


class Codebook(nn.Module):
    """K x D codewords with exponential-moving-average cluster statistics.

    All state lives in buffers: codewords are never touched by the
    optimizer, only by :func:`ema_update` and :func:`reinit_dead_codes`.
    ``usage`` holds the assignment counts of the most recent batch.
    """

    def __init__(self, size: int, dim: int, decay: float = 0.99, init: torch.Tensor | None = None, generator: torch.Generator | None = None):
        super().__init__()
        if size < 2:
            raise ValueError("codebook needs at least 2 entries")
        self.size = size
        self.dim = dim
        self.decay = decay
        entries = init.clone() if init is not None else torch.randn(size, dim, generator=generator)
        if entries.shape != (size, dim):
            raise ShapeError(f"codebook init must be ({size}, {dim}), got {tuple(entries.shape)}")
        self.register_buffer("entries", entries)
        self.register_buffer("ema_cluster_size", torch.ones(size, dtype=entries.dtype))
        self.register_buffer("ema_embed_sum", entries.clone())
        self.register_buffer("usage", torch.zeros(size, dtype=torch.long), persistent=False)

    def extra_repr(self) -> str:
        return f"size={self.size}, dim={self.dim}, decay={self.decay}"

    def lookup(self, indices: torch.Tensor) -> torch.Tensor:
        return self.entries[indices]


@dataclass
class QuantizeOutput:
    indices: torch.Tensor
    quantized: torch.Tensor
    commitment_loss: torch.Tensor


def nearest_indices(entries: torch.Tensor, latents: torch.Tensor) -> torch.Tensor:
    """Index of the closest codeword (squared Euclidean) for each row."""
    d = (
        latents.pow(2).sum(-1, keepdim=True)
        - 2.0 * latents @ entries.t()
        + entries.pow(2).sum(-1)[None, :]
    )
    return torch.argmin(d, dim=-1)


def quantize(codebook: Codebook, latents: torch.Tensor) -> QuantizeOutput:
    """Quantize (N, D) latents.

    ``quantized`` equals the selected codewords in value but carries the
    identity gradient back to ``latents``. ``commitment_loss`` is the MSE
    between latents and (detached) codewords, so it only trains the encoder.
    """
    if latents.ndim != 2 or latents.shape[-1] != codebook.dim:
        raise ShapeError(f"latents must be (N, {codebook.dim}), got {tuple(latents.shape)}")
    if latents.shape[0] == 0:
        raise ShapeError("empty latent sequence")
    entries = codebook.entries.to(latents.dtype)
    indices = nearest_indices(entries.detach(), latents.detach())
    selected = entries[indices].detach()
    quantized = latents + (selected - latents).detach()
    commitment = torch.mean((latents - selected) ** 2)
    codebook.usage.copy_(torch.bincount(indices, minlength=codebook.size))
    return QuantizeOutput(indices, quantized, commitment)


@torch.no_grad()
def ema_update(codebook: Codebook, latents: torch.Tensor, indices: torch.Tensor, decay: float | None = None) -> Codebook:
    """One EMA step of cluster sizes, embedding sums and codewords, in place."""
    gamma = codebook.decay if decay is None else decay
    latents = latents.detach().to(codebook.entries.dtype)
    onehot = torch.nn.functional.one_hot(indices, codebook.size).to(latents.dtype)
    counts = onehot.sum(0)
    sums = onehot.t() @ latents
    codebook.ema_cluster_size.mul_(gamma).add_((1.0 - gamma) * counts)
    codebook.ema_embed_sum.mul_(gamma).add_((1.0 - gamma) * sums)
    codebook.entries.copy_(codebook.ema_embed_sum / codebook.ema_cluster_size.clamp(min=EMA_EPS)[:, None])
    return codebook


@torch.no_grad()
def reinit_dead_codes(
    codebook: Codebook,
    usage: torch.Tensor,
    latents: torch.Tensor,
    generator: torch.Generator | None = None,
    noise_std: float = 1e-3,
) -> torch.Tensor:
    """Replace codewords with zero ``usage`` by random batch latents plus noise.

    Latents are sampled with replacement, so a batch smaller than the number
    of dead codes is fine. Reinitialized entries get EMA statistics
    ``(1, entry)``; used entries are left bitwise untouched. Returns the
    indices that were reset.
    """
    dead = torch.nonzero(usage == 0).flatten()
    if dead.numel() == 0:
        return dead
    latents = latents.detach().to(codebook.entries.dtype)
    pick = torch.randint(0, latents.shape[0], (dead.numel(),), generator=generator)
    noise = torch.randn(dead.numel(), codebook.dim, generator=generator, dtype=latents.dtype) * noise_std
    fresh = latents[pick] + noise
    codebook.entries[dead] = fresh
    codebook.ema_embed_sum[dead] = fresh
    codebook.ema_cluster_size[dead] = 1.0
    return dead


class VectorQuantizer(nn.Module):
    """Module wrapper over a :class:`Codebook` for (B, D, T) latents."""

    def __init__(self, size: int, dim: int, decay: float = 0.99, noise_std: float = 1e-3, generator=None):
        super().__init__()
        self.codebook = Codebook(size, dim, decay, generator=generator)
        self.noise_std = noise_std

    def forward(self, z: torch.Tensor):
        b, d, t = z.shape
        flat = z.transpose(1, 2).reshape(b * t, d)
        out = quantize(self.codebook, flat)
        q = out.quantized.reshape(b, t, d).transpose(1, 2)
        return q, out.indices.reshape(b, t), out.commitment_loss, flat

    def update(self, flat_latents: torch.Tensor, indices: torch.Tensor, generator=None):
        """EMA step followed by dead-code reinitialization for one batch."""
        indices = indices.flatten()
        usage = torch.bincount(indices, minlength=self.codebook.size)
        ema_update(self.codebook, flat_latents, indices)
        return reinit_dead_codes(self.codebook, usage, flat_latents, generator, self.noise_std)

    def decode(self, indices: torch.Tensor) -> torch.Tensor:
        """(B, T) indices to (B, D, T) codewords."""
        return self.codebook.lookup(indices).transpose(1, 2)
