"""Dataset ingestion and loading.

Images live as PNG/JPEG files; ingestion center-crops, resizes, and
re-encodes them into a PNG cache with a sorted-path manifest. Loading maps
pixels to [-1, 1] float tensors. A synthetic-corpus generator provides
deterministic test fixtures with enough high-frequency detail that a small
codebook cannot memorize them.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw, UnidentifiedImageError

from .errors import InputError

__all__ = ["image_to_tensor", "ingest", "load_corpus", "synthesize_corpus", "tensor_to_image"]

_EXTENSIONS = {".png", ".jpg", ".jpeg"}


def image_to_tensor(img: Image.Image) -> torch.Tensor:
    """PIL image -> (3, H, W) float tensor in [-1, 1]."""
    arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return torch.from_numpy(arr).permute(2, 0, 1) / 127.5 - 1.0


def tensor_to_image(t: torch.Tensor) -> Image.Image:
    """(3, H, W) tensor in [-1, 1] -> PIL image, clamped."""
    arr = ((t.detach().clamp(-1, 1) + 1.0) * 127.5).round().to(torch.uint8)
    return Image.fromarray(arr.permute(1, 2, 0).numpy())


def _center_crop_resize(img: Image.Image, size: int) -> Image.Image:
    w, h = img.size
    side = min(w, h)
    left, top = (w - side) // 2, (h - side) // 2
    img = img.crop((left, top, left + side, top + side))
    return img.resize((size, size), Image.BICUBIC)


def ingest(dataset_dir, image_size: int, cache_dir) -> Path:
    """Normalize a directory of images into a PNG cache.

    Writes one PNG per readable source image plus ``manifest.txt`` listing
    cache paths in sorted source order; unreadable files are skipped and
    recorded in a footer. Returns the manifest path.
    """
    src = Path(dataset_dir)
    if not src.is_dir():
        raise InputError(f"dataset directory not found: {src}")
    out = Path(cache_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = sorted(p for p in src.iterdir() if p.suffix.lower() in _EXTENSIONS)
    lines, skipped = [], []
    for p in paths:
        try:
            with Image.open(p) as img:
                prepared = _center_crop_resize(img.convert("RGB"), image_size)
        except (UnidentifiedImageError, OSError):
            skipped.append(p.name)
            continue
        name = p.stem + ".png"
        prepared.save(out / name)
        lines.append(name)
    manifest = out / "manifest.txt"
    footer = [f"# skipped: {n}" for n in skipped]
    manifest.write_text("\n".join(lines + footer) + "\n")
    return manifest


def load_corpus(directory, image_size: int | None = None) -> tuple[torch.Tensor, list[str]]:
    """Load every PNG/JPEG under ``directory`` (sorted), stacked as a tensor.

    With ``image_size`` set, images are cropped/resized to match; otherwise
    all images must share one resolution already.
    """
    d = Path(directory)
    paths = sorted(p for p in d.iterdir() if p.suffix.lower() in _EXTENSIONS) if d.is_dir() else []
    if not paths:
        raise InputError(f"no images found in {d}")
    tensors = []
    for p in paths:
        with Image.open(p) as img:
            img = img.convert("RGB")
            if image_size is not None:
                img = _center_crop_resize(img, image_size)
            tensors.append(image_to_tensor(img))
    shapes = {tuple(t.shape) for t in tensors}
    if len(shapes) != 1:
        raise InputError(f"mixed image shapes in {d}: {sorted(shapes)}")
    return torch.stack(tensors), [p.name for p in paths]


def synthesize_corpus(out_dir, count: int, image_size: int = 64, seed: int = 0) -> list[Path]:
    """Generate a deterministic corpus of busy little pictures.

    Each image is a two-color gradient with random shapes and strokes plus
    per-pixel noise, so non-edited regions carry detail a 16x16 quantized
    latent cannot reproduce on its own.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    written = []
    for i in range(count):
        top = rng.integers(0, 256, size=3)
        bottom = rng.integers(0, 256, size=3)
        ramp = np.linspace(0, 1, image_size)[:, None, None]
        column = (1 - ramp) * top[None, None, :] + ramp * bottom[None, None, :]
        base = np.tile(column, (1, image_size, 1))
        img = Image.fromarray(base.astype(np.uint8))
        draw = ImageDraw.Draw(img)
        for _ in range(int(rng.integers(5, 15))):
            color = tuple(int(v) for v in rng.integers(0, 256, size=3))
            x0, y0 = rng.integers(0, image_size, size=2)
            dx, dy = rng.integers(4, max(5, image_size // 2), size=2)
            shape = rng.integers(0, 3)
            if shape == 0:
                draw.rectangle([int(x0), int(y0), int(x0 + dx), int(y0 + dy)], fill=color)
            elif shape == 1:
                draw.ellipse([int(x0), int(y0), int(x0 + dx), int(y0 + dy)], fill=color)
            else:
                x1, y1 = rng.integers(0, image_size, size=2)
                draw.line([int(x0), int(y0), int(x1), int(y1)], fill=color,
                          width=int(rng.integers(1, 4)))
        arr = np.asarray(img, dtype=np.float64)
        arr = arr + rng.normal(0.0, 12.0, size=arr.shape)
        path = out / f"img_{i:05d}.png"
        Image.fromarray(np.clip(arr, 0, 255).astype(np.uint8)).save(path)
        written.append(path)
    return written
