"""Asymmetric decoder: vanilla upsampling backbone plus mask-guided blending.

The backbone is conv-in, a mid ResBlock/Attention/ResBlock stack, one
upsampling level per channel-multiplier entry, and a GroupNorm/conv out
block. A blend point sits at the entry of every level and one more before
the out block; the mid block has none. With a full mask every blend passes
the decoder feature through untouched, which is also how stage-0
(symmetric, unconditional) decoding runs.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import AttnBlock, ResnetBlock, Upsample, normalize, swish
from .cond_branch import BlendMode, pyramid_scales, pyramid_widths
from .errors import ConfigurationError

__all__ = [
    "Decoder",
    "DecoderArchConfig",
    "ScalePreset",
    "downsample_mask",
    "feature_plan",
    "mgb_blend",
]


class ScalePreset(enum.Enum):
    BASE = "base"
    LARGE = "large"
    LARGE_X2 = "large_x2"


# width multiplier and ResBlock count relative to the base preset
_PRESET_WIDTH = {ScalePreset.BASE: 1.0, ScalePreset.LARGE: 1.5, ScalePreset.LARGE_X2: 2.0}
_PRESET_DEPTH = {ScalePreset.BASE: 3, ScalePreset.LARGE: 4, ScalePreset.LARGE_X2: 8}


@dataclass(frozen=True)
class DecoderArchConfig:
    base_channels: int = 128
    ch_mult: tuple[int, ...] = (1, 2, 4, 4)
    res_blocks: int = 3
    blend_mode: BlendMode = BlendMode.ADDITION
    n_z: int = 4
    scale_preset: ScalePreset = ScalePreset.BASE

    def __post_init__(self):
        if self.base_channels < 1 or self.res_blocks < 1 or self.n_z < 1:
            raise ConfigurationError("base_channels, res_blocks, n_z must be >= 1")
        if len(self.ch_mult) < 2:
            raise ConfigurationError("ch_mult needs at least two levels")

    @classmethod
    def from_preset(
        cls,
        preset: ScalePreset,
        reference_channels: int = 128,
        ch_mult: tuple[int, ...] = (1, 2, 4, 4),
        blend_mode: BlendMode = BlendMode.ADDITION,
        n_z: int = 4,
    ) -> "DecoderArchConfig":
        return cls(
            base_channels=int(round(reference_channels * _PRESET_WIDTH[preset])),
            ch_mult=tuple(ch_mult),
            res_blocks=_PRESET_DEPTH[preset],
            blend_mode=blend_mode,
            n_z=n_z,
            scale_preset=preset,
        )

    @property
    def n_levels(self) -> int:
        return len(self.ch_mult)

    @property
    def upsample_factor(self) -> int:
        return 2 ** (self.n_levels - 1)

    def blend_widths(self) -> list[int]:
        return pyramid_widths(self.base_channels, self.ch_mult)

    def blend_scales(self) -> list[int]:
        return pyramid_scales(self.n_levels + 1)


def downsample_mask(m: torch.Tensor, level: int) -> torch.Tensor:
    """Mask at 1/2^level resolution; a coarse cell is edited iff any fine pixel is."""
    if level == 0:
        return m
    return F.max_pool2d(m, 2 ** level)


def mgb_blend(f_dec, f_cond, m_level, mode: BlendMode, fusion: nn.Module | None = None):
    """Blend decoder and condition features under the edited-region mask.

    Addition mode keeps the edited region from the decoder and the rest
    from the condition branch; concatenation mode stacks both plus the
    inverted mask and fuses with a 1x1 conv.
    """
    if f_dec.shape[0] != f_cond.shape[0] or f_dec.shape[2:] != f_cond.shape[2:]:
        raise ConfigurationError(f"misaligned features {tuple(f_dec.shape)} vs {tuple(f_cond.shape)}")
    if m_level.shape != (f_dec.shape[0], 1, f_dec.shape[2], f_dec.shape[3]):
        raise ConfigurationError(f"mask {tuple(m_level.shape)} does not match features")
    if mode is BlendMode.ADDITION:
        if f_dec.shape[1] != f_cond.shape[1]:
            raise ConfigurationError("addition blend requires equal channel counts")
        return f_dec * m_level + f_cond * (1 - m_level)
    if fusion is None:
        raise ConfigurationError("concatenation blend requires fusion parameters")
    return fusion(torch.cat([f_dec, f_cond, 1 - m_level], dim=1))


def feature_plan(cfg: DecoderArchConfig, latent_hw: tuple[int, int]) -> list[tuple[str, int, int, int]]:
    """Expected (stage, channels, h, w) at each point of a decode pass."""
    widths = [cfg.base_channels * m for m in cfg.ch_mult]
    blend_w = cfg.blend_widths()
    h, w = latent_hw
    plan = [("mid", widths[-1], h, w)]
    for l in reversed(range(cfg.n_levels)):
        plan.append((f"level{l}_entry", blend_w[l + 1], h, w))
        plan.append((f"level{l}_blocks", widths[l], h, w))
        if l > 0:
            h, w = h * 2, w * 2
            plan.append((f"level{l}_up", widths[l], h, w))
    plan.append(("out_blend", blend_w[0], h, w))
    plan.append(("output", 3, h, w))
    return plan


class Decoder(nn.Module):
    """Upsampling decoder with one blend point per level plus the out block."""

    def __init__(self, cfg: DecoderArchConfig):
        super().__init__()
        self.cfg = cfg
        widths = [cfg.base_channels * m for m in cfg.ch_mult]
        blend_w = cfg.blend_widths()
        concat = cfg.blend_mode is BlendMode.CONCATENATION

        self.conv_in = nn.Conv2d(cfg.n_z, widths[-1], 3, stride=1, padding=1)
        self.mid_block_1 = ResnetBlock(widths[-1], widths[-1])
        self.mid_attn = AttnBlock(widths[-1])
        self.mid_block_2 = ResnetBlock(widths[-1], widths[-1])

        # stored coarsest level first, matching the order decoding visits them
        self.levels = nn.ModuleList()
        for l in reversed(range(cfg.n_levels)):
            entry = blend_w[l + 1]
            level = nn.Module()
            level.level_index = l
            level.fuse = nn.Conv2d(2 * entry + 1, entry, 1) if concat else None
            level.blocks = nn.ModuleList()
            ch = entry
            for _ in range(cfg.res_blocks):
                level.blocks.append(ResnetBlock(ch, widths[l]))
                ch = widths[l]
            level.upsample = Upsample(ch) if l > 0 else None
            self.levels.append(level)

        self.out_fuse = nn.Conv2d(2 * blend_w[0] + 1, blend_w[0], 1) if concat else None
        self.norm_out = normalize(blend_w[0])
        self.conv_out = nn.Conv2d(blend_w[0], 3, 3, stride=1, padding=1)

    def _check_inputs(self, z, pyramid, m):
        cfg = self.cfg
        if z.ndim != 4 or z.shape[1] != cfg.n_z:
            raise ConfigurationError(f"latent {tuple(z.shape)} does not carry {cfg.n_z} channels")
        widths, scales = cfg.blend_widths(), cfg.blend_scales()
        if len(pyramid) != len(widths):
            raise ConfigurationError(f"pyramid has {len(pyramid)} levels, expected {len(widths)}")
        out_h, out_w = z.shape[2] * cfg.upsample_factor, z.shape[3] * cfg.upsample_factor
        for k, (t, width, scale) in enumerate(zip(pyramid, widths, scales)):
            expected = (z.shape[0], width, out_h // scale, out_w // scale)
            if tuple(t.shape) != expected:
                raise ConfigurationError(f"pyramid level {k} is {tuple(t.shape)}, expected {expected}")
        if m.shape != (z.shape[0], 1, out_h, out_w):
            raise ConfigurationError(f"mask {tuple(m.shape)} does not match output {out_h}x{out_w}")

    def decode(self, z, pyramid, m, _trace: list | None = None) -> torch.Tensor:
        self._check_inputs(z, pyramid, m)
        h = self.conv_in(z)
        h = self.mid_block_2(self.mid_attn(self.mid_block_1(h)))
        if _trace is not None:
            _trace.append(("mid", *h.shape[1:]))
        for level in self.levels:
            l = level.level_index
            m_l = downsample_mask(m, l)
            h = mgb_blend(h, pyramid[l + 1], m_l, self.cfg.blend_mode, level.fuse)
            if _trace is not None:
                _trace.append((f"level{l}_entry", *h.shape[1:]))
            for block in level.blocks:
                h = block(h)
            if _trace is not None:
                _trace.append((f"level{l}_blocks", *h.shape[1:]))
            if level.upsample is not None:
                h = level.upsample(h)
                if _trace is not None:
                    _trace.append((f"level{l}_up", *h.shape[1:]))
        # blend after the norm: outside the edited region the output then
        # depends on the condition features through swish + one conv only,
        # which is what lets the copy path train quickly
        h = mgb_blend(self.norm_out(h), pyramid[0], m, self.cfg.blend_mode, self.out_fuse)
        if _trace is not None:
            _trace.append(("out_blend", *h.shape[1:]))
        out = torch.tanh(self.conv_out(swish(h)))
        if _trace is not None:
            _trace.append(("output", *out.shape[1:]))
        return out

    forward = decode

    def zero_pyramid(self, z: torch.Tensor) -> list[torch.Tensor]:
        cfg = self.cfg
        out_h, out_w = z.shape[2] * cfg.upsample_factor, z.shape[3] * cfg.upsample_factor
        return [
            torch.zeros(z.shape[0], width, out_h // scale, out_w // scale, dtype=z.dtype, device=z.device)
            for width, scale in zip(cfg.blend_widths(), cfg.blend_scales())
        ]

    def decode_unconditional(self, z: torch.Tensor) -> torch.Tensor:
        """Decode from the latent alone: full mask, zero condition pyramid."""
        out_h = z.shape[2] * self.cfg.upsample_factor
        out_w = z.shape[3] * self.cfg.upsample_factor
        m = torch.ones(z.shape[0], 1, out_h, out_w, dtype=z.dtype, device=z.device)
        return self.decode(z, self.zero_pyramid(z), m)
