"""Random edit-mask generation, the full-mask training alternation, coverage
binning, and 1-bit PNG persistence. Convention everywhere: 1 = edited.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import ConfigurationError

__all__ = [
    "MaskKind",
    "MaskSpec",
    "box_mask",
    "coverage",
    "coverage_bin",
    "generate_mask",
    "load_mask",
    "save_masks",
    "training_mask_schedule",
]


class MaskKind(enum.Enum):
    RANDOM_IRREGULAR = "random_irregular"
    RANDOM_BOX = "random_box"
    MIXED = "mixed"
    FULL = "full"


@dataclass(frozen=True)
class MaskSpec:
    """Generator parameters; stroke widths and box sides are fractions."""

    kind: MaskKind = MaskKind.MIXED
    coverage_range: tuple[float, float] = (0.1, 0.5)
    stroke_count: tuple[int, int] = (1, 4)
    stroke_width: tuple[float, float] = (0.05, 0.15)
    vertex_count: tuple[int, int] = (3, 8)
    box_count: tuple[int, int] = (0, 3)
    box_size: tuple[float, float] = (0.10, 0.40)
    seed: int | None = None

    def __post_init__(self):
        lo, hi = self.coverage_range
        if not (0.0 <= lo < hi <= 1.0):
            raise ConfigurationError(f"coverage_range must satisfy 0 <= lo < hi <= 1, got {self.coverage_range}")


def coverage(m: np.ndarray) -> float:
    return float(m.astype(np.float64).mean())


def coverage_bin(m: np.ndarray) -> int:
    """Decile bin of the edited fraction: [0,0.1), ..., [0.4,0.5), then >= 0.5."""
    return min(int(coverage(m) * 10), 5)


def box_mask(h: int, w: int, top: int, left: int, bh: int, bw: int) -> np.ndarray:
    img = Image.new("L", (w, h), 0)
    # PIL rectangles include both corners, hence the -1
    ImageDraw.Draw(img).rectangle([left, top, left + bw - 1, top + bh - 1], fill=255)
    return (np.asarray(img) > 0).astype(np.uint8)


def _draw_strokes(draw: ImageDraw.ImageDraw, h: int, w: int, spec: MaskSpec, rng: np.random.Generator):
    n = int(rng.integers(spec.stroke_count[0], spec.stroke_count[1] + 1))
    for _ in range(n):
        n_vertices = int(rng.integers(spec.vertex_count[0], spec.vertex_count[1] + 1))
        pts = [(float(rng.uniform(0, w)), float(rng.uniform(0, h))) for _ in range(n_vertices)]
        width = max(1, int(round(rng.uniform(*spec.stroke_width) * min(h, w))))
        draw.line(pts, fill=255, width=width, joint="curve")


def _draw_boxes(draw: ImageDraw.ImageDraw, h: int, w: int, spec: MaskSpec, rng: np.random.Generator, at_least_one: bool):
    lo = max(spec.box_count[0], 1) if at_least_one else spec.box_count[0]
    n = int(rng.integers(lo, max(spec.box_count[1], lo) + 1))
    for _ in range(n):
        bh = max(1, int(round(rng.uniform(*spec.box_size) * h)))
        bw = max(1, int(round(rng.uniform(*spec.box_size) * w)))
        top = int(rng.integers(0, h - bh + 1))
        left = int(rng.integers(0, w - bw + 1))
        draw.rectangle([left, top, left + bw - 1, top + bh - 1], fill=255)


def _one_attempt(spec: MaskSpec, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    img = Image.new("L", (w, h), 0)
    draw = ImageDraw.Draw(img)
    if spec.kind in (MaskKind.RANDOM_IRREGULAR, MaskKind.MIXED):
        _draw_strokes(draw, h, w, spec, rng)
    if spec.kind in (MaskKind.RANDOM_BOX, MaskKind.MIXED):
        _draw_boxes(draw, h, w, spec, rng, at_least_one=spec.kind is MaskKind.RANDOM_BOX)
    return (np.asarray(img) > 0).astype(np.uint8)


def generate_mask(
    spec: MaskSpec, h: int, w: int, rng: np.random.Generator | None = None, max_retries: int = 50
) -> tuple[np.ndarray, bool]:
    """Binary H x W mask plus a flag marking a best-effort miss.

    Random kinds are rejection-sampled into ``coverage_range``; after
    ``max_retries`` misses the attempt closest to the range is returned
    flagged. Full masks are all ones and never flagged.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    if spec.kind is MaskKind.FULL:
        return np.ones((h, w), dtype=np.uint8), False

    lo, hi = spec.coverage_range
    best, best_dist = None, None
    for _ in range(max_retries):
        m = _one_attempt(spec, h, w, rng)
        c = coverage(m)
        if lo <= c <= hi:
            return m, False
        dist = lo - c if c < lo else c - hi
        if best_dist is None or dist < best_dist:
            best, best_dist = m, dist
    return best, True


def training_mask_schedule(
    step: int,
    rng: np.random.Generator,
    full_mask_prob: float = 0.5,
    coverage_range: tuple[float, float] = (0.1, 0.5),
) -> MaskSpec:
    """Per-step spec draw: Full with ``full_mask_prob``, otherwise Mixed."""
    if rng.random() < full_mask_prob:
        return MaskSpec(kind=MaskKind.FULL, coverage_range=coverage_range)
    return MaskSpec(kind=MaskKind.MIXED, coverage_range=coverage_range)


def save_masks(masks: list[np.ndarray], out_dir) -> Path:
    """Write 1-bit PNGs plus a "path<TAB>coverage" manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, m in enumerate(masks):
        name = f"mask_{i:05d}.png"
        Image.fromarray((m > 0)).convert("1").save(out / name)
        lines.append(f"{name}\t{coverage(m)}")
    manifest = out / "masks.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def load_mask(path) -> np.ndarray:
    return (np.asarray(Image.open(path).convert("L")) > 0).astype(np.uint8)
