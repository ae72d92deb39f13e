"""Codebook quantization of spatial latents.

Each spatial vector of a latent grid is replaced by its nearest codebook
entry (squared Euclidean distance, ties broken by lowest index). Gradients
reach the encoder through a straight-through pass and reach the codebook
through the codebook/commitment loss pair.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import ConfigurationError

__all__ = ["VectorQuantizer", "quantize", "straight_through", "vq_losses"]


def quantize(z: torch.Tensor, codebook: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Map every spatial vector of ``z`` to its nearest codebook entry.

    Args:
        z: latent grid of shape (B, C, H, W).
        codebook: entries of shape (K, C).

    Returns:
        (z_q, indices): quantized values (B, C, H, W) and the chosen entry
        index per location (B, H, W). Equidistant entries resolve to the
        lowest index.
    """
    if codebook.ndim != 2 or codebook.shape[0] < 1:
        raise ConfigurationError(f"codebook must be (K, C) with K >= 1, got {tuple(codebook.shape)}")
    if z.ndim != 4 or z.shape[1] != codebook.shape[1]:
        raise ConfigurationError(
            f"latent channels {tuple(z.shape)} do not match codebook dim {codebook.shape[1]}"
        )
    k = codebook.shape[0]
    flat = z.permute(0, 2, 3, 1).reshape(-1, z.shape[1])
    with torch.no_grad():
        # direct (v - c)^2 differences so the scan matches a per-entry oracle
        # bit-for-bit; the expanded |v|^2 - 2vc + |c|^2 form does not
        dist = (flat.unsqueeze(1) - codebook.unsqueeze(0)).pow(2).sum(-1)
        min_d = dist.min(dim=1, keepdim=True).values
        cand = torch.arange(k, device=z.device).expand_as(dist)
        indices = torch.where(dist == min_d, cand, k).min(dim=1).values
    z_q = codebook[indices]
    z_q = z_q.reshape(z.shape[0], z.shape[2], z.shape[3], z.shape[1]).permute(0, 3, 1, 2)
    return z_q.contiguous(), indices.reshape(z.shape[0], z.shape[2], z.shape[3])


def straight_through(z: torch.Tensor, z_q: torch.Tensor) -> torch.Tensor:
    """Forward ``z_q``, backward identity to ``z``."""
    if z.shape != z_q.shape:
        raise ConfigurationError(f"shape mismatch {tuple(z.shape)} vs {tuple(z_q.shape)}")
    # z - z.detach() is exactly zero, so the forward value is z_q itself
    # (the usual z + (z_q - z).detach() drifts by rounding)
    return z_q.detach() + (z - z.detach())


def vq_losses(z_enc: torch.Tensor, z_q: torch.Tensor, beta: float = 0.25) -> tuple[torch.Tensor, torch.Tensor]:
    """Codebook and commitment losses, both mean-reduced over all elements.

    The codebook loss stops gradients into the encoder output; the
    commitment loss stops gradients into the quantized values and carries
    the ``beta`` weight.
    """
    if z_enc.shape != z_q.shape:
        raise ConfigurationError(f"shape mismatch {tuple(z_enc.shape)} vs {tuple(z_q.shape)}")
    codebook_loss = (z_enc.detach() - z_q).pow(2).mean()
    commit_loss = beta * (z_q.detach() - z_enc).pow(2).mean()
    return codebook_loss, commit_loss


class VectorQuantizer(nn.Module):
    """Learnable codebook with nearest-entry lookup.

    Entries are trained by gradient descent through the codebook loss;
    there is no EMA update path.
    """

    def __init__(self, codebook_size: int = 512, embed_dim: int = 4, beta: float = 0.25):
        super().__init__()
        if codebook_size < 1 or embed_dim < 1:
            raise ConfigurationError("codebook_size and embed_dim must be >= 1")
        self.codebook_size = codebook_size
        self.embed_dim = embed_dim
        self.beta = beta
        self.embedding = nn.Embedding(codebook_size, embed_dim)
        self.embedding.weight.data.uniform_(-1.0 / codebook_size, 1.0 / codebook_size)

    @property
    def codebook(self) -> torch.Tensor:
        return self.embedding.weight

    def forward(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        """Quantize ``z`` and return (z_q pass-through, indices, codebook_loss, commit_loss)."""
        _, indices = quantize(z, self.codebook.detach())
        # re-gather through the embedding so the codebook loss reaches the entries
        z_q = self.embedding(indices).permute(0, 3, 1, 2).contiguous()
        codebook_loss, commit_loss = vq_losses(z, z_q, self.beta)
        return straight_through(z, z_q), indices, codebook_loss, commit_loss
