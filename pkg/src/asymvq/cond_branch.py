"""Lightweight conditional encoder over the masked image.

Consumes Y = X (x) m-bar and emits one feature map per decoder blend point,
finest to coarsest. In concatenation mode every layer is a partial
convolution threading a validity mask; in addition mode the layers are
standard convolutions and the mask touches the input once (upstream).
"""

from __future__ import annotations

import enum

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import swish
from .errors import ConfigurationError

__all__ = ["BlendMode", "ConditionBranch", "PartialConv2d", "pyramid_widths", "pyramid_scales"]


class BlendMode(enum.Enum):
    ADDITION = "addition"
    CONCATENATION = "concatenation"


def pyramid_widths(base_channels: int, ch_mult: tuple[int, ...]) -> list[int]:
    """Channel width at each blend point, finest to coarsest.

    Point 0 feeds the decoder's out block (width of the finest level);
    point k >= 1 feeds decoder level k-1 at its entry, whose width is the
    producing (next-coarser) level's. The last two points share the
    coarsest width since the mid block keeps it.
    """
    n_levels = len(ch_mult)
    return [base_channels * ch_mult[min(k, n_levels - 1)] for k in range(n_levels + 1)]


def pyramid_scales(n_points: int) -> list[int]:
    """Spatial downscale factor per blend point: 1, 1, 2, 4, 8, ..."""
    return [2 ** max(0, k - 1) for k in range(n_points)]


class PartialConv2d(nn.Module):
    """Convolution renormalized over valid inputs only.

    Where the receptive field holds at least one valid pixel the output is
    (W . (x (x) v)) * windowSize/validCount + bias, with windowSize counted
    over in-bounds taps so an all-valid mask reproduces a standard zero-padded
    convolution exactly. Where no valid pixel is visible the output is zero.
    Returns (features, updated validity).
    """

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size, stride=stride, padding=padding)

    def forward(self, x: torch.Tensor, validity: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if validity.shape != (x.shape[0], 1, x.shape[2], x.shape[3]):
            raise ConfigurationError(
                f"validity {tuple(validity.shape)} must be single-channel at input resolution"
            )
        w = self.conv.weight
        with torch.no_grad():
            counter = torch.ones(1, 1, w.shape[2], w.shape[3], dtype=x.dtype, device=x.device)
            valid_count = F.conv2d(
                validity, counter, stride=self.conv.stride, padding=self.conv.padding
            )
            window = F.conv2d(
                torch.ones_like(validity), counter, stride=self.conv.stride, padding=self.conv.padding
            )
            any_valid = valid_count > 0
        raw = F.conv2d(x * validity, w, stride=self.conv.stride, padding=self.conv.padding)
        scale = window / valid_count.clamp_min(1)
        out = raw * scale + self.conv.bias.view(1, -1, 1, 1)
        out = torch.where(any_valid, out, torch.zeros((), dtype=out.dtype, device=out.device))
        return out, any_valid.to(x.dtype)


class ConditionBranch(nn.Module):
    """Feature pyramid over Y, one level per decoder blend point.

    Layer schedule: two stride-1 3x3 layers at full resolution, then 4x4
    stride-2 layers halving down to the latent resolution. Widths follow
    ``pyramid_widths`` for the given channel schedule.
    """

    def __init__(self, base_channels: int, ch_mult: tuple[int, ...], blend_mode: BlendMode, in_channels: int = 3):
        super().__init__()
        if len(ch_mult) < 2:
            raise ConfigurationError("need at least two levels for a blend pyramid")
        self.blend_mode = blend_mode
        self.widths = pyramid_widths(base_channels, ch_mult)
        self.scales = pyramid_scales(len(self.widths))
        self.input_divisor = max(self.scales)

        layers = []
        prev = in_channels
        for k, width in enumerate(self.widths):
            if k < 2:
                kernel, stride, pad = 3, 1, 1
            else:
                kernel, stride, pad = 4, 2, 1
            if blend_mode is BlendMode.CONCATENATION:
                layers.append(PartialConv2d(prev, width, kernel, stride=stride, padding=pad))
            else:
                layers.append(nn.Conv2d(prev, width, kernel, stride=stride, padding=pad))
            prev = width
        self.layers = nn.ModuleList(layers)

    def forward(self, y: torch.Tensor, m: torch.Tensor) -> list[torch.Tensor]:
        """Pyramid for masked image ``y`` and edit mask ``m`` (1 = edited)."""
        if y.ndim != 4:
            raise ConfigurationError(f"expected B x C x H x W input, got {tuple(y.shape)}")
        if y.shape[2] % self.input_divisor or y.shape[3] % self.input_divisor:
            raise ConfigurationError(
                f"input {tuple(y.shape)} not divisible by pyramid factor {self.input_divisor}"
            )
        if m.shape != (y.shape[0], 1, y.shape[2], y.shape[3]):
            raise ConfigurationError(f"mask {tuple(m.shape)} does not match input {tuple(y.shape)}")

        levels = []
        h = y
        if self.blend_mode is BlendMode.CONCATENATION:
            validity = 1.0 - m
            for layer in self.layers:
                h, validity = layer(h, validity)
                h = swish(h)
                levels.append(h)
        else:
            for layer in self.layers:
                h = swish(layer(h))
                levels.append(h)
        return levels
