"""Two-stage training.

Stage 0 trains a symmetric autoencoder (VQ or KL-regularized) end to end
with the full objective. Stage 1 freezes the encoder and codebook and
trains a fresh decoder plus the conditional branch under the 50/50
full-mask alternation.

All stochasticity is derived per step from ``SeedSequence([seed, step,
substream])`` — substream 0 picks the batch, 1 drives mask specs and
drawing, 2 draws Gaussian latent noise — so runs are bitwise reproducible
and resuming from a checkpoint continues the identical trajectory.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .cond_branch import BlendMode, ConditionBranch
from .data import load_corpus
from .decoder import Decoder, DecoderArchConfig, ScalePreset
from .encoder import Encoder, sample_gaussian
from .errors import ConfigurationError, InputError
from .losses import (
    LossComponents,
    PatchDiscriminator,
    PerceptualExtractor,
    TotalMode,
    adaptive_lambda,
    decoder_grad_norm,
    gan_losses,
    kl_loss,
    perceptual_loss,
    pixel_loss,
    total_loss,
)
from .masks import MaskKind, generate_mask, training_mask_schedule
from .quantizer import VectorQuantizer

__all__ = ["LOSS_CSV_HEADER", "TrainConfig", "Trainer", "build_models", "lr_schedule", "step_rng"]

LOSS_CSV_HEADER = "step,loss_total,loss_pixel,loss_percep,loss_gan,loss_kl,lambda,lr,mask_kind"

SUB_BATCH, SUB_MASK, SUB_NOISE = 0, 1, 2

_PRESETS = {p.value: p for p in ScalePreset}
_BLENDS = {b.value: b for b in BlendMode}


@dataclass
class TrainConfig:
    stage: int = 0
    latent_mode: str = "vq"
    blend_mode: str = "addition"
    scale_preset: str = "base"
    image_size: int = 64
    downsample_factor: int = 4
    base_channels: int = 16
    codebook_size: int = 512
    n_z: int = 4
    beta: float = 0.25
    lr_peak: float = 3.6e-4
    warmup_steps: int = 200
    total_steps: int = 2000
    batch_size: int = 16
    seed: int = 0
    dataset_dir: str = ""
    out_dir: str = "run"
    gan_warmup: int = 1000
    full_mask_prob: float = 0.5
    lambda_numerator: str = "pixel"
    checkpoint_every: int = 500
    inherit_discriminator: bool = False
    base_checkpoint: str = ""

    def validate(self):
        if self.stage not in (0, 1):
            raise ConfigurationError("stage must be 0 or 1")
        if self.latent_mode not in ("vq", "kl"):
            raise ConfigurationError("latent_mode must be 'vq' or 'kl'")
        if self.blend_mode not in _BLENDS:
            raise ConfigurationError(f"blend_mode must be one of {sorted(_BLENDS)}")
        if self.scale_preset not in _PRESETS:
            raise ConfigurationError(f"scale_preset must be one of {sorted(_PRESETS)}")
        f = self.downsample_factor
        if f < 2 or f & (f - 1):
            raise ConfigurationError("downsample_factor must be a power of two >= 2")
        if self.image_size % f:
            raise ConfigurationError("image_size must be divisible by downsample_factor")
        if not 0 < self.warmup_steps < self.total_steps:
            raise ConfigurationError("need 0 < warmup_steps < total_steps")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.lambda_numerator not in ("pixel", "rec"):
            raise ConfigurationError("lambda_numerator must be 'pixel' or 'rec'")
        if not 0.0 <= self.full_mask_prob <= 1.0:
            raise ConfigurationError("full_mask_prob must be in [0, 1]")
        if self.stage == 1 and not self.base_checkpoint:
            raise ConfigurationError("stage 1 requires the 'base_checkpoint' key")

    @property
    def ch_mult(self) -> tuple[int, ...]:
        n_levels = int(math.log2(self.downsample_factor)) + 1
        return tuple(min(2 ** l, 4) for l in range(n_levels))


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to lr_peak, then cosine decay to zero at total_steps."""
    if step <= cfg.warmup_steps:
        return cfg.lr_peak * step / cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return cfg.lr_peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def step_rng(seed: int, step: int, substream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, step, substream]))


def build_models(cfg: TrainConfig) -> dict:
    """Instantiate every module the configured stage trains or consumes."""
    ch_mult = cfg.ch_mult
    kl = cfg.latent_mode == "kl"
    base_depth = DecoderArchConfig.from_preset(ScalePreset.BASE, cfg.base_channels, ch_mult).res_blocks
    models = {
        "encoder": Encoder(cfg.base_channels, ch_mult, res_blocks=base_depth, n_z=cfg.n_z, kl_mode=kl),
        "perceptual": PerceptualExtractor(seed=cfg.seed),
        "discriminator": PatchDiscriminator(ndf=32),
    }
    if not kl:
        models["quantizer"] = VectorQuantizer(cfg.codebook_size, cfg.n_z, cfg.beta)
    if cfg.stage == 0:
        models["decoder"] = Decoder(
            DecoderArchConfig.from_preset(
                ScalePreset.BASE, cfg.base_channels, ch_mult, BlendMode.ADDITION, cfg.n_z
            )
        )
    else:
        dec_cfg = DecoderArchConfig.from_preset(
            _PRESETS[cfg.scale_preset], cfg.base_channels, ch_mult, _BLENDS[cfg.blend_mode], cfg.n_z
        )
        models["decoder"] = Decoder(dec_cfg)
        models["cond_branch"] = ConditionBranch(dec_cfg.base_channels, ch_mult, dec_cfg.blend_mode)
    return models


_COMPAT_KEYS = ("latent_mode", "image_size", "downsample_factor", "base_channels", "n_z", "codebook_size")


class Trainer:
    def __init__(self, cfg: TrainConfig, dataset: tuple[torch.Tensor, list[str]] | None = None):
        cfg.validate()
        self.cfg = cfg
        torch.set_num_threads(1)  # fixed reduction order, hence bitwise reproducibility
        torch.manual_seed(cfg.seed)
        self.images, self.names = dataset if dataset is not None else load_corpus(cfg.dataset_dir, cfg.image_size)
        if self.images.shape[0] == 0:
            raise InputError("dataset is empty")
        if self.images.shape[2] != cfg.image_size or self.images.shape[3] != cfg.image_size:
            raise InputError(
                f"dataset images are {tuple(self.images.shape[2:])}, config wants {cfg.image_size}"
            )
        self.models = build_models(cfg)
        self.step = 0
        if cfg.stage == 1:
            self._adopt_base(cfg.base_checkpoint)
        self._build_optimizers()

    # ------------------------------------------------------------ setup

    def _adopt_base(self, path):
        tensors, meta = load_checkpoint(path)
        base_cfg = meta["config"]
        if base_cfg.get("stage") != 0:
            raise ConfigurationError("base_checkpoint must come from a stage-0 run")
        for key in _COMPAT_KEYS:
            if base_cfg.get(key) != getattr(self.cfg, key):
                raise ConfigurationError(
                    f"incompatible base checkpoint: {key}={base_cfg.get(key)!r} vs {getattr(self.cfg, key)!r}"
                )
        self._load_group(tensors, "encoder")
        if self.cfg.latent_mode == "vq":
            self._load_group(tensors, "quantizer")
        self._load_group(tensors, "perceptual")
        if self.cfg.inherit_discriminator:
            self._load_group(tensors, "discriminator")
        self.models["encoder"].requires_grad_(False)
        if "quantizer" in self.models:
            self.models["quantizer"].requires_grad_(False)

    def _load_group(self, tensors, prefix):
        state = {k[len(prefix) + 1 :]: v for k, v in tensors.items() if k.startswith(prefix + ".")}
        self.models[prefix].load_state_dict(state)

    def _build_optimizers(self):
        cfg = self.cfg
        if cfg.stage == 0:
            gen = list(self.models["encoder"].parameters()) + list(self.models["decoder"].parameters())
            if "quantizer" in self.models:
                gen += list(self.models["quantizer"].parameters())
        else:
            # the freeze is structural: encoder/codebook never enter this optimizer
            gen = list(self.models["decoder"].parameters()) + list(self.models["cond_branch"].parameters())
        self.opt_g = torch.optim.Adam(gen, lr=cfg.lr_peak, betas=(0.5, 0.9))
        self.opt_d = torch.optim.Adam(self.models["discriminator"].parameters(), lr=cfg.lr_peak, betas=(0.5, 0.9))

    # ------------------------------------------------------------ state

    def state_tensors(self) -> dict[str, torch.Tensor]:
        out = {}
        for prefix, module in sorted(self.models.items()):
            for k, v in module.state_dict().items():
                out[f"{prefix}.{k}"] = v
        return out

    def _meta(self) -> dict:
        return {
            "config": asdict(self.cfg),
            "step": self.step,
            "rng": {"scheme": "seed-sequence [seed, step, substream]",
                    "substreams": {"batch": SUB_BATCH, "mask": SUB_MASK, "noise": SUB_NOISE}},
            "optimizers": {"g": self.opt_g.state_dict(), "d": self.opt_d.state_dict()},
        }

    def save(self, path) -> Path:
        return save_checkpoint(path, self.state_tensors(), self._meta())

    @classmethod
    def from_checkpoint(cls, path, dataset=None) -> "Trainer":
        tensors, meta = load_checkpoint(path)
        known = {f.name for f in fields(TrainConfig)}
        cfg = TrainConfig(**{k: v for k, v in meta["config"].items() if k in known})
        trainer = cls(cfg, dataset=dataset)
        for prefix in trainer.models:
            trainer._load_group(tensors, prefix)
        for opt, key in ((trainer.opt_g, "g"), (trainer.opt_d, "d")):
            sd = meta["optimizers"][key]
            sd["state"] = {int(k): v for k, v in sd["state"].items()}  # JSON stringified the keys
            opt.load_state_dict(sd)
        trainer.step = meta["step"]
        return trainer

    # ------------------------------------------------------------ steps

    def _batch(self, step: int) -> torch.Tensor:
        rng = step_rng(self.cfg.seed, step, SUB_BATCH)
        idx = rng.integers(0, self.images.shape[0], size=self.cfg.batch_size)
        return self.images[torch.from_numpy(idx)]

    def _mask_batch(self, step: int) -> tuple[torch.Tensor, str]:
        cfg = self.cfg
        rng = step_rng(cfg.seed, step, SUB_MASK)
        spec = training_mask_schedule(step, rng, cfg.full_mask_prob)
        if spec.kind is MaskKind.FULL:
            m = torch.ones(cfg.batch_size, 1, cfg.image_size, cfg.image_size)
        else:
            draws = [generate_mask(spec, cfg.image_size, cfg.image_size, rng)[0] for _ in range(cfg.batch_size)]
            m = torch.from_numpy(np.stack(draws)[:, None].astype(np.float32))
        return m, spec.kind.value

    def _noise_like(self, step: int, t: torch.Tensor) -> torch.Tensor:
        rng = step_rng(self.cfg.seed, step, SUB_NOISE)
        return torch.from_numpy(rng.standard_normal(tuple(t.shape)).astype(np.float32))

    def _reconstruct(self, step: int, x: torch.Tensor):
        """Forward pass of the configured stage; returns (x_hat, extra components)."""
        cfg = self.cfg
        extra = {}
        if cfg.stage == 0:
            if cfg.latent_mode == "vq":
                z = self.models["encoder"].encode(x)
                z_q, _, codebook_loss, commit_loss = self.models["quantizer"](z)
                extra.update(codebook=codebook_loss, commit=commit_loss)
            else:
                g = self.models["encoder"].encode_gaussian(x)
                z_q = sample_gaussian(g, self._noise_like(step, g.mu))
                extra.update(kl=kl_loss(g))
            x_hat = self.models["decoder"].decode_unconditional(z_q)
            return x_hat, extra, "none"

        m, mask_kind = self._mask_batch(step)
        with torch.no_grad():
            if cfg.latent_mode == "vq":
                z_q, _, _, _ = self.models["quantizer"](self.models["encoder"].encode(x))
            else:
                g = self.models["encoder"].encode_gaussian(x)
                z_q = sample_gaussian(g, self._noise_like(step, g.mu))
        y = x * (1.0 - m)
        pyramid = self.models["cond_branch"](y, m)
        x_hat = self.models["decoder"].decode(z_q, pyramid, m)
        return x_hat, extra, mask_kind

    def _mode(self) -> TotalMode:
        if self.cfg.stage == 0:
            return TotalMode.VQ_STAGE0 if self.cfg.latent_mode == "vq" else TotalMode.VAEGAN_STAGE0
        return TotalMode.ASYM_STAGE1 if self.cfg.latent_mode == "vq" else TotalMode.ASYMVAE_STAGE1

    def train_step(self, step: int) -> dict:
        cfg = self.cfg
        lr = lr_schedule(step, cfg)
        for opt in (self.opt_g, self.opt_d):
            for group in opt.param_groups:
                group["lr"] = lr

        x = self._batch(step)
        gan_active = step > cfg.gan_warmup
        disc = self.models["discriminator"]

        x_hat, extra, mask_kind = self._reconstruct(step, x)

        d_loss_val = 0.0
        if gan_active:
            d_loss, _ = gan_losses(disc(x), disc(x_hat.detach()))
            self.opt_d.zero_grad()
            d_loss.backward()
            self.opt_d.step()
            d_loss_val = d_loss.item()

        pixel = pixel_loss(x, x_hat)
        percep = perceptual_loss(x, x_hat, self.models["perceptual"])
        lam, gan_g = 0.0, None
        if gan_active:
            # only the fake-logit half matters for the generator side
            fake_logits = disc(x_hat)
            _, gan_g = gan_losses(fake_logits.detach(), fake_logits)
            last_w = self.models["decoder"].conv_out.weight
            numerator = pixel if cfg.lambda_numerator == "pixel" else pixel + percep
            lam = adaptive_lambda(decoder_grad_norm(numerator, last_w), decoder_grad_norm(gan_g, last_w))

        components = LossComponents(pixel=pixel, percep=percep, gan_g=gan_g, **extra)
        total = total_loss(components, lam, self._mode())
        if not torch.isfinite(total).item():
            raise RuntimeError(
                f"non-finite loss at step {step}: pixel={pixel.item():.6g} percep={percep.item():.6g} "
                f"gan={gan_g.item() if gan_g is not None else 0.0:.6g} d={d_loss_val:.6g}"
            )
        self.opt_g.zero_grad()
        total.backward()
        self.opt_g.step()

        kl_val = extra["kl"].item() if "kl" in extra else 0.0
        return {
            "step": step,
            "loss_total": total.item(),
            "loss_pixel": pixel.item(),
            "loss_percep": percep.item(),
            "loss_gan": gan_g.item() if gan_g is not None else 0.0,
            "loss_kl": kl_val,
            "lambda": lam,
            "lr": lr,
            "mask_kind": mask_kind,
        }

    # ------------------------------------------------------------- loop

    def train(self) -> Path:
        cfg = self.cfg
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "loss_log.csv"
        new_log = not csv_path.exists()
        final = out / "ckpt_final.avq"
        with csv_path.open("a", newline="") as fh:
            writer = csv.writer(fh)
            if new_log:
                writer.writerow(LOSS_CSV_HEADER.split(","))
            for step in range(self.step + 1, cfg.total_steps + 1):
                self.step = step
                row = self.train_step(step)
                writer.writerow([row[k] for k in LOSS_CSV_HEADER.split(",")])
                if step % cfg.checkpoint_every == 0 or step == cfg.total_steps:
                    fh.flush()
                    self.save(out / f"ckpt_{step:06d}.avq")
        self.save(final)
        return final
