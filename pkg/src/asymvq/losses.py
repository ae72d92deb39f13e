"""Training objective: pixel MAE, multi-level perceptual loss, patch-GAN
losses with the adaptive weight, the KL term, and the per-mode composite.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .encoder import GaussianLatent
from .errors import ConfigurationError, InputError

__all__ = [
    "LossComponents",
    "PatchDiscriminator",
    "PerceptualExtractor",
    "TotalMode",
    "adaptive_lambda",
    "decoder_grad_norm",
    "gan_losses",
    "kl_loss",
    "perceptual_loss",
    "pixel_loss",
    "total_loss",
]


def pixel_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over every element."""
    if x.shape != x_hat.shape:
        raise ConfigurationError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return (x - x_hat).abs().mean()


class PerceptualExtractor(nn.Module):
    """Five fixed conv stages with halving resolution plus nonnegative
    1x1 reducers, all drawn once from a seeded generator and stored as
    buffers so checkpoints pin them.

    Stands in for a pretrained feature backbone at small scale; the loss
    arithmetic on top is identical. Smooth activations keep the whole map
    differentiable everywhere.
    """

    def __init__(self, in_channels: int = 3, widths: tuple[int, ...] = (8, 16, 32, 64, 64), seed: int = 0):
        super().__init__()
        self.widths = tuple(widths)
        g = torch.Generator().manual_seed(seed)
        prev = in_channels
        for k, width in enumerate(self.widths):
            kernel = 3 if k == 0 else 4
            fan_in = prev * kernel * kernel
            w = torch.randn(width, prev, kernel, kernel, generator=g) * (2.0 / fan_in) ** 0.5
            self.register_buffer(f"stage{k}_weight", w)
            self.register_buffer(f"reduce{k}_weight", torch.rand(1, width, 1, 1, generator=g))
            prev = width

    @property
    def n_stages(self) -> int:
        return len(self.widths)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        out = []
        h = x
        for k in range(self.n_stages):
            w = getattr(self, f"stage{k}_weight")
            stride = 1 if k == 0 else 2
            h = F.conv2d(h, w, stride=stride, padding=1)
            h = h * torch.sigmoid(h)
            out.append(h)
        return out

    def reduce(self, k: int, d: torch.Tensor) -> torch.Tensor:
        return F.conv2d(d, getattr(self, f"reduce{k}_weight"))


def perceptual_loss(x: torch.Tensor, x_hat: torch.Tensor, e) -> torch.Tensor:
    """Sum over stages of the spatially averaged, channel-reduced squared
    feature difference."""
    if x.shape != x_hat.shape:
        raise ConfigurationError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    total = None
    fx, fy = e.features(x), e.features(x_hat)
    for k, (a, b) in enumerate(zip(fx, fy)):
        r = e.reduce(k, (a - b).pow(2))
        term = r.flatten(1).sum(1).div(r.shape[2] * r.shape[3]).mean()
        total = term if total is None else total + term
    return total


class PatchDiscriminator(nn.Module):
    """Strided conv stack emitting a spatial grid of real/fake logits."""

    def __init__(self, in_channels: int = 3, ndf: int = 64, n_layers: int = 3):
        super().__init__()
        layers = [nn.Conv2d(in_channels, ndf, 4, stride=2, padding=1), nn.LeakyReLU(0.2, True)]
        mult = 1
        for i in range(1, n_layers):
            prev, mult = mult, min(2 ** i, 8)
            layers += [
                nn.Conv2d(ndf * prev, ndf * mult, 4, stride=2, padding=1),
                nn.BatchNorm2d(ndf * mult),
                nn.LeakyReLU(0.2, True),
            ]
        prev, mult = mult, min(2 ** n_layers, 8)
        layers += [
            nn.Conv2d(ndf * prev, ndf * mult, 4, stride=1, padding=1),
            nn.BatchNorm2d(ndf * mult),
            nn.LeakyReLU(0.2, True),
            nn.Conv2d(ndf * mult, 1, 4, stride=1, padding=1),
        ]
        self.main = nn.Sequential(*layers)
        self.apply(self._init)

    @staticmethod
    def _init(m):
        if isinstance(m, nn.Conv2d):
            nn.init.normal_(m.weight, 0.0, 0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.normal_(m.weight, 1.0, 0.02)
            nn.init.zeros_(m.bias)

    def forward(self, x):
        return self.main(x)


def gan_losses(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Logistic discriminator loss and the non-saturating generator loss.

    softplus(-r) = -log sigma(r) and softplus(f) = -log(1 - sigma(f)), so
    both terms stay finite for extreme logits.
    """
    d_loss = F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()
    g_loss = F.softplus(-fake_logits).mean()
    return d_loss, g_loss


def adaptive_lambda(grad_pixel_norm: float, grad_gan_norm: float, delta: float = 1e-4) -> float:
    """Ratio of reconstruction to GAN gradient norms, clamped to [0, 1e4]."""
    if grad_pixel_norm < 0 or grad_gan_norm < 0:
        raise InputError("gradient norms must be nonnegative")
    return min(max(grad_pixel_norm / (grad_gan_norm + delta), 0.0), 1e4)


def decoder_grad_norm(loss: torch.Tensor, last_layer_weight: torch.Tensor) -> float:
    """Euclidean norm of d(loss)/d(final decoder conv weights)."""
    (g,) = torch.autograd.grad(loss, last_layer_weight, retain_graph=True)
    return g.norm().item()


def kl_loss(g: GaussianLatent) -> torch.Tensor:
    """0.5 * (sum mu^2 + sum(exp(eps) - eps - 1)), mean over the batch."""
    per_sample = 0.5 * (
        g.mu.pow(2).flatten(1).sum(1) + (g.log_var.exp() - g.log_var - 1).flatten(1).sum(1)
    )
    return per_sample.mean()


class TotalMode(enum.Enum):
    VQ_STAGE0 = "vq_stage0"
    ASYM_STAGE1 = "asym_stage1"
    VAEGAN_STAGE0 = "vaegan_stage0"
    ASYMVAE_STAGE1 = "asymvae_stage1"


@dataclass
class LossComponents:
    pixel: torch.Tensor
    percep: torch.Tensor
    gan_g: torch.Tensor | None = None
    codebook: torch.Tensor | None = None
    commit: torch.Tensor | None = None
    kl: torch.Tensor | None = None


def total_loss(
    c: LossComponents,
    lam: float,
    mode: TotalMode,
    lambda_percep: float = 1.0,
) -> torch.Tensor:
    """Composite objective for one generator-side step.

    Stage-0 modes add the latent regularizer (codebook/commitment or KL);
    stage-1 modes are reconstruction + weighted GAN only. ``lam`` scales the
    generator GAN term and may be 0 (warm-up), in which case ``gan_g`` may
    be absent.
    """

    def require(name):
        value = getattr(c, name)
        if value is None:
            raise ConfigurationError(f"{mode.value} needs component '{name}'")
        return value

    if mode in (TotalMode.VQ_STAGE0, TotalMode.VAEGAN_STAGE0):
        total = require("pixel") + lambda_percep * require("percep")
    else:
        total = require("pixel") + require("percep")
    if mode is TotalMode.VQ_STAGE0:
        total = total + require("codebook") + require("commit")
    elif mode is TotalMode.VAEGAN_STAGE0:
        total = total + require("kl")
    if lam != 0.0:
        total = total + lam * require("gan_g")
    return total
