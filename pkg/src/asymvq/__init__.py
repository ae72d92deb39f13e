"""Asymmetric vector-quantized autoencoder with a mask-conditioned decoder.

The encoder/quantizer pair is a compact VQ backbone; the decoder carries a
second input branch fed by the unmasked image regions and blends those
features back in at every resolution, so edits can be decoded without
degrading the pixels the edit was supposed to leave alone.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .cond_branch import BlendMode, ConditionBranch, PartialConv2d
from .config import load_train_config
from .data import ingest, load_corpus, synthesize_corpus, tensor_to_image
from .decoder import Decoder, DecoderArchConfig, ScalePreset
from .encoder import Encoder, GaussianLatent, sample_gaussian
from .errors import ConfigurationError, InputError
from .eval import EvalReport, emit_grid, evaluate_model, mae, naive_blend, pre_error, psnr
from .losses import (
    PatchDiscriminator,
    PerceptualExtractor,
    adaptive_lambda,
    gan_losses,
    kl_loss,
    perceptual_loss,
    pixel_loss,
    total_loss,
)
from .masks import MaskKind, MaskSpec, coverage, coverage_bin, generate_mask, save_masks
from .quantizer import VectorQuantizer, quantize, straight_through, vq_losses
from .training import TrainConfig, Trainer, build_models

__version__ = "0.1.0"

__all__ = [
    "BlendMode",
    "ConditionBranch",
    "ConfigurationError",
    "Decoder",
    "DecoderArchConfig",
    "Encoder",
    "EvalReport",
    "GaussianLatent",
    "InputError",
    "MaskKind",
    "MaskSpec",
    "PartialConv2d",
    "PatchDiscriminator",
    "PerceptualExtractor",
    "ScalePreset",
    "TrainConfig",
    "Trainer",
    "VectorQuantizer",
    "adaptive_lambda",
    "build_models",
    "coverage",
    "coverage_bin",
    "emit_grid",
    "evaluate_model",
    "gan_losses",
    "generate_mask",
    "ingest",
    "kl_loss",
    "load_checkpoint",
    "load_corpus",
    "load_train_config",
    "mae",
    "naive_blend",
    "perceptual_loss",
    "pixel_loss",
    "pre_error",
    "psnr",
    "quantize",
    "sample_gaussian",
    "save_checkpoint",
    "save_masks",
    "straight_through",
    "synthesize_corpus",
    "tensor_to_image",
    "total_loss",
    "vq_losses",
]
