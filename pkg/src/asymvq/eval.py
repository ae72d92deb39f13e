"""Reconstruction metrics and model evaluation reports.

The headline metric is the reconstruction error restricted to non-edited
pixels (``pre_error``): it isolates how faithfully a decoder preserves the
regions an edit is supposed to leave alone. Reports bin images by mask
coverage and ship as JSON, an aligned text table, and per-image CSV.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

from .checkpoint import load_checkpoint
from .data import load_corpus, tensor_to_image
from .errors import ConfigurationError, InputError
from .masks import coverage, coverage_bin, load_mask
from .training import TrainConfig, build_models

__all__ = [
    "EvalReport",
    "PRE_ERROR_UNIT",
    "emit_grid",
    "evaluate_model",
    "load_model",
    "mae",
    "naive_blend",
    "pre_error",
    "psnr",
]

# paper-style tables quote Pre_error in units of 1e-5
PRE_ERROR_UNIT = 1e-5

BIN_LABELS = ("0-10%", "10-20%", "20-30%", "30-40%", "40-50%", ">=50%")

EVAL_CSV_HEADER = "path,coverage,coverage_bin,pre_error,psnr,mae"


def _as_mask_tensor(m, x: torch.Tensor) -> torch.Tensor:
    if isinstance(m, np.ndarray):
        m = torch.from_numpy(m)
    m = m.to(torch.float32)
    if m.ndim == 2:
        m = m[None]
    if m.shape[-2:] != x.shape[-2:]:
        raise InputError(f"mask is {tuple(m.shape[-2:])}, image is {tuple(x.shape[-2:])}")
    return m


def pre_error(x: torch.Tensor, x_hat: torch.Tensor, m) -> float | None:
    """MSE over non-edited pixels only (m = 0), on [-1, 1] images.

    Returns None when the mask covers everything — there is nothing whose
    preservation could be measured.
    """
    m = _as_mask_tensor(m, x)
    keep = (m == 0).expand_as(x)
    n = int(keep.sum().item())
    if n == 0:
        return None
    # metric accumulation in double so tiny per-pixel errors survive the sum
    diff = (x.double() - x_hat.double())[keep]
    return (diff * diff).sum().item() / n


def psnr(x: torch.Tensor, x_hat: torch.Tensor) -> float:
    """Peak signal-to-noise ratio in dB; peak-to-peak range on [-1, 1] is 2."""
    mse = ((x.double() - x_hat.double()) ** 2).mean().item()
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(4.0 / mse)


def mae(x: torch.Tensor, x_hat: torch.Tensor) -> float:
    return (x.double() - x_hat.double()).abs().mean().item()


def naive_blend(x_src: torch.Tensor, x_hat: torch.Tensor, m) -> torch.Tensor:
    """Pixel-space paste: source outside the edit, prediction inside it."""
    if x_src.shape != x_hat.shape:
        raise InputError(f"shape mismatch {tuple(x_src.shape)} vs {tuple(x_hat.shape)}")
    m = _as_mask_tensor(m, x_src)
    return x_src * (1.0 - m) + x_hat * m


# ----------------------------------------------------------------- loading


def load_model(ckpt_path) -> tuple[dict, TrainConfig]:
    """Rebuild the modules a checkpoint describes, in inference mode."""
    tensors, meta = load_checkpoint(ckpt_path)
    known = {f.name for f in fields(TrainConfig)}
    cfg = TrainConfig(**{k: v for k, v in meta["config"].items() if k in known})
    models = build_models(cfg)
    for prefix, module in models.items():
        state = {k[len(prefix) + 1 :]: v for k, v in tensors.items() if k.startswith(prefix + ".")}
        module.load_state_dict(state)
        module.eval().requires_grad_(False)
    return models, cfg


def _load_masks(mask_corpus) -> list[np.ndarray]:
    if isinstance(mask_corpus, (list, tuple)):
        return [np.asarray(m) for m in mask_corpus]
    d = Path(mask_corpus)
    manifest = d / "masks.tsv"
    if manifest.is_file():
        # the manifest names exactly the mask files (the dir may hold figures too)
        paths = [d / line.split("\t")[0] for line in manifest.read_text().splitlines() if line]
    else:
        paths = sorted(d.glob("*.png")) if d.is_dir() else []
    if not paths:
        raise InputError(f"no masks found in {d}")
    return [load_mask(p) for p in paths]


def _reconstruct(models, cfg: TrainConfig, x: torch.Tensor, m: torch.Tensor, condition: bool):
    if cfg.latent_mode == "vq":
        z = models["quantizer"](models["encoder"].encode(x))[0]
    else:
        z = models["encoder"].encode_gaussian(x).mu  # posterior mean at eval time
    if not condition:
        return models["decoder"].decode_unconditional(z)
    pyramid = models["cond_branch"](x * (1.0 - m), m)
    return models["decoder"].decode(z, pyramid, m)


# ------------------------------------------------------------------ report


@dataclass
class EvalReport:
    model_id: str
    condition: bool
    records: list

    def aggregates(self) -> dict:
        """Means recomputed from the records — the report keeps no extra state."""

        def summarize(rows):
            pres = [r["pre_error"] for r in rows if r["pre_error"] is not None]
            return {
                "count": len(rows),
                "pre_error": sum(pres) / len(pres) if pres else None,
                "psnr": sum(r["psnr"] for r in rows) / len(rows) if rows else None,
                "mae": sum(r["mae"] for r in rows) / len(rows) if rows else None,
            }

        by_bin = {}
        for b in range(len(BIN_LABELS)):
            rows = [r for r in self.records if r["coverage_bin"] == b]
            if rows:
                by_bin[str(b)] = summarize(rows)
        return {"overall": summarize(self.records), "by_bin": by_bin}

    def to_json(self) -> str:
        payload = {
            "model": self.model_id,
            "condition": self.condition,
            "columns_absent": ["fid", "lpips"],  # need large pretrained nets
            "records": self.records,
            "aggregates": self.aggregates(),
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        lines = [EVAL_CSV_HEADER]
        for r in self.records:
            pe = "" if r["pre_error"] is None else repr(r["pre_error"])
            lines.append(
                f"{r['path']},{r['coverage']:.6f},{r['coverage_bin']},{pe},{r['psnr']:.6f},{r['mae']:.6f}"
            )
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        agg = self.aggregates()

        def fmt_pre(v):
            return "-" if v is None else f"{v / PRE_ERROR_UNIT:.1f}"

        def fmt(v, spec=".3f"):
            return "-" if v is None else format(v, spec)

        header = f"{'coverage':>9} {'n':>5} {'FID':>5} {'LPIPS':>6} {'Pre_error(x1e-5)':>17} {'PSNR(dB)':>9} {'MAE':>8}"
        lines = [
            f"model: {self.model_id}",
            f"decode: {'mask-conditioned' if self.condition else 'unconditional'}",
            header,
            "-" * len(header),
        ]
        for b, label in enumerate(BIN_LABELS):
            s = agg["by_bin"].get(str(b))
            if s is None:
                continue
            lines.append(
                f"{label:>9} {s['count']:>5} {'-':>5} {'-':>6} {fmt_pre(s['pre_error']):>17} "
                f"{fmt(s['psnr'], '.2f'):>9} {fmt(s['mae']):>8}"
            )
        o = agg["overall"]
        lines.append(
            f"{'overall':>9} {o['count']:>5} {'-':>5} {'-':>6} {fmt_pre(o['pre_error']):>17} "
            f"{fmt(o['psnr'], '.2f'):>9} {fmt(o['mae']):>8}"
        )
        return "\n".join(lines) + "\n"

    def save(self, out_dir, stem: str = "report") -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "json": out / f"{stem}.json",
            "table": out / f"{stem}.txt",
            "csv": out / f"{stem}.csv",
        }
        paths["json"].write_text(self.to_json())
        paths["table"].write_text(self.to_table())
        paths["csv"].write_text(self.to_csv())
        return paths


def evaluate_model(ckpt_path, dataset, mask_corpus, condition: bool = True,
                   batch_size: int = 16) -> EvalReport:
    """Score a checkpoint on (image, mask) pairs; mask i follows image order cyclically."""
    models, cfg = load_model(ckpt_path)
    if condition and "cond_branch" not in models:
        raise ConfigurationError(
            "conditional evaluation requires a checkpoint with a condition branch (trained at stage 1)"
        )

    if isinstance(dataset, tuple):
        images, names = dataset
    else:
        images, names = load_corpus(dataset)
    if images.shape[-1] != cfg.image_size or images.shape[-2] != cfg.image_size:
        raise InputError(
            f"dataset images are {tuple(images.shape[-2:])}, checkpoint expects {cfg.image_size}"
        )
    raw_masks = _load_masks(mask_corpus)
    masks = torch.stack([_as_mask_tensor(m, images[0]) for m in raw_masks])

    records = []
    with torch.no_grad():
        for lo in range(0, images.shape[0], batch_size):
            x = images[lo : lo + batch_size]
            m = torch.stack([masks[(lo + j) % len(raw_masks)] for j in range(x.shape[0])])
            x_hat = _reconstruct(models, cfg, x, m, condition)
            for j in range(x.shape[0]):
                mask_np = raw_masks[(lo + j) % len(raw_masks)]
                records.append(
                    {
                        "path": names[lo + j],
                        "coverage": coverage(mask_np),
                        "coverage_bin": coverage_bin(mask_np),
                        "pre_error": pre_error(x[j], x_hat[j], m[j]),
                        "psnr": psnr(x[j], x_hat[j]),
                        "mae": mae(x[j], x_hat[j]),
                    }
                )

    model_id = (
        f"{Path(ckpt_path).stem} stage={cfg.stage} latent={cfg.latent_mode} "
        f"preset={cfg.scale_preset} blend={cfg.blend_mode}"
    )
    return EvalReport(model_id=model_id, condition=condition, records=records)


# ------------------------------------------------------------------- grids


_MARGIN_TOP = 14
_MARGIN_LEFT = 22


def emit_grid(rows, path, column_labels=("input", "masked", "output", "blend")) -> Path:
    """Render rows of image tensors into one labeled PNG panel."""
    if not rows or not rows[0]:
        raise InputError("emit_grid needs at least one row of images")
    n_cols = len(rows[0])
    if any(len(r) != n_cols for r in rows):
        raise InputError("all grid rows must have the same number of images")
    tiles = [[tensor_to_image(img) if isinstance(img, torch.Tensor) else img for img in r] for r in rows]
    w, h = tiles[0][0].size
    canvas = Image.new("RGB", (_MARGIN_LEFT + n_cols * w, _MARGIN_TOP + len(tiles) * h), (255, 255, 255))
    draw = ImageDraw.Draw(canvas)
    for c, label in enumerate(column_labels[:n_cols]):
        draw.text((_MARGIN_LEFT + c * w + 2, 2), str(label), fill=(0, 0, 0))
    for r, row in enumerate(tiles):
        draw.text((2, _MARGIN_TOP + r * h + 2), str(r), fill=(0, 0, 0))
        for c, tile in enumerate(row):
            if tile.size != (w, h):
                raise InputError("grid tiles must share one resolution")
            canvas.paste(tile, (_MARGIN_LEFT + c * w, _MARGIN_TOP + r * h))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    canvas.save(path)
    return path
