"""CNN encoder from pixel space to the pre-quantization latent grid.

The layout mirrors the base decoder schedule in reverse: conv-in, per-level
ResBlocks with strided downsampling between levels, a mid
ResBlock/Attention/ResBlock stack, and a conv-out projecting to ``n_z``
channels (or ``2 * n_z`` in the KL-regularized variant, split into mean and
log-variance halves).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .blocks import AttnBlock, Downsample, ResnetBlock, normalize, swish
from .errors import ConfigurationError, InputError

__all__ = ["Encoder", "GaussianLatent", "sample_gaussian"]


@dataclass
class GaussianLatent:
    """Mean and log-variance halves of a KL-mode encoding."""

    mu: torch.Tensor
    log_var: torch.Tensor


def sample_gaussian(g: GaussianLatent, noise: torch.Tensor | None = None) -> torch.Tensor:
    """Reparameterized draw z = mu + exp(log_var / 2) * noise."""
    if noise is None:
        noise = torch.randn_like(g.mu)
    if noise.shape != g.mu.shape:
        raise InputError(f"noise shape {tuple(noise.shape)} != latent shape {tuple(g.mu.shape)}")
    return g.mu + torch.exp(g.log_var / 2) * noise


class Encoder(nn.Module):
    """Downsampling encoder with factor f = 2^(len(ch_mult) - 1).

    ``kl_mode`` doubles the output channels; ``encode_gaussian`` splits them
    with the mean in the first half.
    """

    def __init__(
        self,
        base_channels: int = 128,
        ch_mult: tuple[int, ...] = (1, 2, 4, 4),
        res_blocks: int = 2,
        n_z: int = 4,
        kl_mode: bool = False,
    ):
        super().__init__()
        if len(ch_mult) < 1:
            raise ConfigurationError("ch_mult must have at least one level")
        self.base_channels = base_channels
        self.ch_mult = tuple(ch_mult)
        self.n_z = n_z
        self.kl_mode = kl_mode
        self.downsample_factor = 2 ** (len(ch_mult) - 1)

        widths = [base_channels * m for m in ch_mult]
        self.conv_in = nn.Conv2d(3, widths[0], 3, stride=1, padding=1)

        self.levels = nn.ModuleList()
        ch = widths[0]
        for i, w in enumerate(widths):
            level = nn.Module()
            level.blocks = nn.ModuleList()
            for _ in range(res_blocks):
                level.blocks.append(ResnetBlock(ch, w))
                ch = w
            level.downsample = Downsample(ch) if i < len(widths) - 1 else None
            self.levels.append(level)

        self.mid_block_1 = ResnetBlock(ch, ch)
        self.mid_attn = AttnBlock(ch)
        self.mid_block_2 = ResnetBlock(ch, ch)

        self.norm_out = normalize(ch)
        self.conv_out = nn.Conv2d(ch, 2 * n_z if kl_mode else n_z, 3, stride=1, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        f = self.downsample_factor
        if x.ndim != 4 or x.shape[2] % f or x.shape[3] % f:
            raise InputError(f"input {tuple(x.shape)} not divisible by downsample factor {f}")
        h = self.conv_in(x)
        for level in self.levels:
            for block in level.blocks:
                h = block(h)
            if level.downsample is not None:
                h = level.downsample(h)
        h = self.mid_block_2(self.mid_attn(self.mid_block_1(h)))
        return self.conv_out(swish(self.norm_out(h)))

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        if self.kl_mode:
            raise ConfigurationError("encode() is for VQ mode; use encode_gaussian()")
        return self(x)

    def encode_gaussian(self, x: torch.Tensor) -> GaussianLatent:
        if not self.kl_mode:
            raise ConfigurationError("encoder was not built with kl_mode=True")
        out = self(x)
        return GaussianLatent(mu=out[:, : self.n_z], log_var=out[:, self.n_z :])
