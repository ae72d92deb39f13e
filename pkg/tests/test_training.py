"""Trainer behaviour: schedules, determinism, resume, freeze, logging."""

import math

import numpy as np
import pytest
import torch

from asymvq.data import load_corpus, synthesize_corpus
from asymvq.errors import ConfigurationError, InputError
from asymvq.training import (
    LOSS_CSV_HEADER,
    TrainConfig,
    Trainer,
    build_models,
    lr_schedule,
    step_rng,
)


@pytest.fixture(scope="module")
def corpus32(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus32")
    synthesize_corpus(root, count=16, image_size=32, seed=1)
    return load_corpus(root)


@pytest.fixture(scope="module")
def corpus16(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus16")
    synthesize_corpus(root, count=64, image_size=16, seed=1)
    return load_corpus(root)


def tiny_cfg(tmp_path, **kw):
    base = dict(
        stage=0,
        image_size=32,
        downsample_factor=2,
        base_channels=8,
        batch_size=4,
        lr_peak=1e-3,
        warmup_steps=5,
        total_steps=50,
        gan_warmup=10**6,
        checkpoint_every=10**6,
        dataset_dir="unused",
        out_dir=str(tmp_path / "run"),
        seed=0,
    )
    base.update(kw)
    return TrainConfig(**base)


def small_dataset(corpus32, n=8):
    images, names = corpus32
    return images[:n], names[:n]


# ---------------------------------------------------------------- schedule


def test_lr_schedule_closed_form():
    cfg = TrainConfig(lr_peak=1e-3, warmup_steps=100, total_steps=1000)
    assert lr_schedule(50, cfg) == pytest.approx(5e-4)
    assert lr_schedule(100, cfg) == pytest.approx(1e-3)
    # halfway through the decay the cosine sits exactly at half peak
    assert lr_schedule(550, cfg) == pytest.approx(5e-4)
    assert lr_schedule(1000, cfg) == pytest.approx(0.0, abs=1e-12)


def test_lr_schedule_rises_then_falls():
    cfg = TrainConfig(lr_peak=2e-4, warmup_steps=20, total_steps=200)
    values = [lr_schedule(s, cfg) for s in range(1, 201)]
    peak = max(values)
    assert values.index(peak) == 19  # step 20
    assert all(a <= b + 1e-15 for a, b in zip(values[:19], values[1:20]))
    assert all(a >= b - 1e-15 for a, b in zip(values[19:-1], values[20:]))


def test_step_rng_stateless_and_substreams_independent():
    a = step_rng(7, 3, 0).integers(0, 10**9, 8)
    b = step_rng(7, 3, 0).integers(0, 10**9, 8)
    c = step_rng(7, 3, 1).integers(0, 10**9, 8)
    d = step_rng(7, 4, 0).integers(0, 10**9, 8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


# ------------------------------------------------------------------ config


@pytest.mark.parametrize(
    "kw",
    [
        dict(stage=2),
        dict(latent_mode="flow"),
        dict(blend_mode="alpha"),
        dict(scale_preset="huge"),
        dict(downsample_factor=3),
        dict(downsample_factor=1),
        dict(image_size=30, downsample_factor=4),
        dict(warmup_steps=50, total_steps=50),
        dict(warmup_steps=0),
        dict(batch_size=0),
        dict(lambda_numerator="both"),
        dict(full_mask_prob=1.5),
    ],
)
def test_config_validation_rejects(kw):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kw).validate()


def test_stage1_requires_base_checkpoint():
    with pytest.raises(ConfigurationError, match="base_checkpoint"):
        TrainConfig(stage=1).validate()


def test_ch_mult_follows_downsample_factor():
    assert TrainConfig(downsample_factor=2).ch_mult == (1, 2)
    assert TrainConfig(downsample_factor=4).ch_mult == (1, 2, 4)
    assert TrainConfig(downsample_factor=16, image_size=64).ch_mult == (1, 2, 4, 4, 4)


def test_build_models_stage0_uses_symmetric_base_decoder():
    cfg = TrainConfig(stage=0, blend_mode="concatenation", scale_preset="large_x2")
    models = build_models(cfg)
    assert set(models) == {"encoder", "perceptual", "discriminator", "quantizer", "decoder"}
    # stage 0 always trains the plain base-scale decoder regardless of the
    # stage-1 settings riding along in the config
    dec_cfg = models["decoder"].cfg
    assert dec_cfg.blend_mode.value == "addition"
    assert dec_cfg.res_blocks == 3
    assert dec_cfg.base_channels == cfg.base_channels


def test_build_models_stage1_adds_condition_branch():
    cfg = TrainConfig(stage=1, blend_mode="concatenation", scale_preset="large",
                      base_checkpoint="x")
    models = build_models(cfg)
    assert "cond_branch" in models and "quantizer" in models
    assert models["decoder"].cfg.blend_mode.value == "concatenation"
    assert models["decoder"].cfg.res_blocks == 4


def test_build_models_kl_mode_has_no_quantizer():
    models = build_models(TrainConfig(latent_mode="kl"))
    assert "quantizer" not in models
    assert models["encoder"].kl_mode


# ----------------------------------------------------------------- dataset


def test_empty_dataset_rejected(tmp_path):
    empty = torch.zeros(0, 3, 16, 16), []
    with pytest.raises(InputError, match="empty"):
        Trainer(tiny_cfg(tmp_path), dataset=empty)


def test_wrong_resolution_rejected(tmp_path, corpus32):
    cfg = tiny_cfg(tmp_path, image_size=64, downsample_factor=4)
    with pytest.raises(InputError):
        Trainer(cfg, dataset=small_dataset(corpus32))


# ------------------------------------------------------------- determinism


def run_steps(trainer, lo, hi):
    rows = [trainer.train_step(s) for s in range(lo, hi + 1)]
    trainer.step = hi
    return rows


def assert_states_equal(a: Trainer, b: Trainer):
    ta, tb = a.state_tensors(), b.state_tensors()
    assert ta.keys() == tb.keys()
    for k in ta:
        assert torch.equal(ta[k], tb[k]), k


def test_same_seed_runs_are_bitwise_identical(tmp_path, corpus32):
    data = small_dataset(corpus32)
    rows = []
    trainers = []
    for _ in range(2):
        # identical configs (out_dir included — it is embedded in checkpoints)
        cfg = tiny_cfg(tmp_path, gan_warmup=2)
        tr = Trainer(cfg, dataset=data)
        rows.append(run_steps(tr, 1, 6))
        trainers.append(tr)
    assert rows[0] == rows[1]
    assert_states_equal(*trainers)
    pa = trainers[0].save(tmp_path / "a.avq")
    pb = trainers[1].save(tmp_path / "b.avq")
    assert pa.read_bytes() == pb.read_bytes()


def test_different_seeds_diverge(tmp_path, corpus32):
    data = small_dataset(corpus32)
    tr0 = Trainer(tiny_cfg(tmp_path / "s0", seed=0), dataset=data)
    tr1 = Trainer(tiny_cfg(tmp_path / "s1", seed=1), dataset=data)
    r0, r1 = tr0.train_step(1), tr1.train_step(1)
    assert r0["loss_pixel"] != r1["loss_pixel"]


def test_resume_from_checkpoint_is_bitwise(tmp_path, corpus32):
    data = small_dataset(corpus32)
    cfg = tiny_cfg(tmp_path, gan_warmup=3)  # resumed segment exercises the GAN path
    full = Trainer(cfg, dataset=data)
    run_steps(full, 1, 5)
    ckpt = full.save(tmp_path / "mid.avq")
    run_steps(full, 6, 10)

    resumed = Trainer.from_checkpoint(ckpt, dataset=data)
    assert resumed.step == 5
    run_steps(resumed, 6, 10)

    assert_states_equal(full, resumed)
    assert full.save(tmp_path / "f.avq").read_bytes() == resumed.save(tmp_path / "r.avq").read_bytes()


# ------------------------------------------------------------ GAN schedule


def test_discriminator_idle_until_warmup_ends(tmp_path, corpus32):
    tr = Trainer(tiny_cfg(tmp_path, gan_warmup=2), dataset=small_dataset(corpus32))
    d_before = {k: v.clone() for k, v in tr.models["discriminator"].state_dict().items()}
    rows = run_steps(tr, 1, 2)
    assert all(r["lambda"] == 0.0 and r["loss_gan"] == 0.0 for r in rows)
    for k, v in tr.models["discriminator"].state_dict().items():
        assert torch.equal(v, d_before[k])

    row3 = tr.train_step(3)
    assert row3["loss_gan"] != 0.0
    changed = any(
        not torch.equal(v, d_before[k]) for k, v in tr.models["discriminator"].state_dict().items()
    )
    assert changed


# ------------------------------------------------------------------ freeze


@pytest.fixture(scope="module")
def base_ckpt(tmp_path_factory, corpus32):
    """A tiny trained stage-0 checkpoint shared by the stage-1 tests."""
    root = tmp_path_factory.mktemp("base")
    cfg = tiny_cfg(root, seed=0, batch_size=2)
    tr = Trainer(cfg, dataset=small_dataset(corpus32, 4))
    run_steps(tr, 1, 3)
    return tr.save(root / "base.avq"), tr


def stage1_cfg(tmp_path, base_path, **kw):
    return tiny_cfg(
        tmp_path,
        stage=1,
        blend_mode=kw.pop("blend_mode", "concatenation"),
        base_checkpoint=str(base_path),
        batch_size=2,
        seed=kw.pop("seed", 9),
        **kw,
    )


def test_stage1_freeze_is_structural_and_holds(tmp_path, corpus32, base_ckpt):
    path, base_tr = base_ckpt
    tr = Trainer(stage1_cfg(tmp_path, path, gan_warmup=2), dataset=small_dataset(corpus32, 4))

    assert all(not p.requires_grad for p in tr.models["encoder"].parameters())
    assert all(not p.requires_grad for p in tr.models["quantizer"].parameters())
    opt_params = {id(p) for g in tr.opt_g.param_groups for p in g["params"]}
    trained = {id(p) for p in tr.models["decoder"].parameters()}
    trained |= {id(p) for p in tr.models["cond_branch"].parameters()}
    assert opt_params == trained

    frozen_before = {
        k: v.clone()
        for k, v in tr.state_tensors().items()
        if k.startswith(("encoder.", "quantizer.", "perceptual."))
    }
    dec_before = {k: v.clone() for k, v in tr.models["decoder"].state_dict().items()}
    run_steps(tr, 1, 6)
    after = tr.state_tensors()
    for k, v in frozen_before.items():
        assert torch.equal(after[k], v), k
    assert any(
        not torch.equal(v, dec_before[k]) for k, v in tr.models["decoder"].state_dict().items()
    )


def test_stage1_adopts_base_weights(tmp_path, corpus32, base_ckpt):
    path, base_tr = base_ckpt
    tr = Trainer(stage1_cfg(tmp_path, path), dataset=small_dataset(corpus32, 4))
    base_state = base_tr.state_tensors()
    for k, v in tr.state_tensors().items():
        if k.startswith(("encoder.", "quantizer.", "perceptual.")):
            assert torch.equal(v, base_state[k]), k
    # fresh discriminator unless explicitly inherited (seeds differ here)
    assert not torch.equal(
        tr.state_tensors()["discriminator.main.0.weight"],
        base_state["discriminator.main.0.weight"],
    )


def test_stage1_can_inherit_discriminator(tmp_path, corpus32, base_ckpt):
    path, base_tr = base_ckpt
    cfg = stage1_cfg(tmp_path, path, inherit_discriminator=True)
    tr = Trainer(cfg, dataset=small_dataset(corpus32, 4))
    base_state = base_tr.state_tensors()
    for k, v in tr.state_tensors().items():
        if k.startswith("discriminator."):
            assert torch.equal(v, base_state[k]), k


def test_stage1_rejects_incompatible_base(tmp_path, corpus32, base_ckpt):
    path, _ = base_ckpt
    cfg = stage1_cfg(tmp_path, path, n_z=8)
    with pytest.raises(ConfigurationError, match="incompatible"):
        Trainer(cfg, dataset=small_dataset(corpus32, 4))


def test_stage1_rejects_stage1_base(tmp_path, corpus32, base_ckpt):
    path, _ = base_ckpt
    tr = Trainer(stage1_cfg(tmp_path / "a", path), dataset=small_dataset(corpus32, 4))
    run_steps(tr, 1, 1)
    bad = tr.save(tmp_path / "stage1.avq")
    with pytest.raises(ConfigurationError, match="stage-0"):
        Trainer(stage1_cfg(tmp_path / "b", bad), dataset=small_dataset(corpus32, 4))


# ----------------------------------------------------------------- logging


def test_stage0_mask_kind_is_none(tmp_path, corpus32):
    tr = Trainer(tiny_cfg(tmp_path), dataset=small_dataset(corpus32))
    assert tr.train_step(1)["mask_kind"] == "none"


def test_stage1_alternates_full_and_mixed(tmp_path, corpus32, base_ckpt):
    path, _ = base_ckpt
    tr = Trainer(stage1_cfg(tmp_path, path), dataset=small_dataset(corpus32, 4))
    kinds = {tr.train_step(s)["mask_kind"] for s in range(1, 25)}
    assert kinds == {"full", "mixed"}


def test_kl_mode_logs_kl_term(tmp_path, corpus32):
    tr = Trainer(tiny_cfg(tmp_path, latent_mode="kl"), dataset=small_dataset(corpus32))
    row = tr.train_step(1)
    assert row["loss_kl"] > 0.0
    tr_vq = Trainer(tiny_cfg(tmp_path / "vq"), dataset=small_dataset(corpus32))
    assert tr_vq.train_step(1)["loss_kl"] == 0.0


def test_nan_loss_aborts_with_step_diagnostic(tmp_path, corpus32):
    tr = Trainer(tiny_cfg(tmp_path), dataset=small_dataset(corpus32))
    with torch.no_grad():
        tr.models["decoder"].conv_out.weight.fill_(float("nan"))
    with pytest.raises(RuntimeError, match="step 1"):
        tr.train_step(1)


def test_train_loop_writes_log_and_checkpoints(tmp_path, corpus32):
    cfg = tiny_cfg(tmp_path, warmup_steps=2, total_steps=6, checkpoint_every=3)
    tr = Trainer(cfg, dataset=small_dataset(corpus32))
    final = tr.train()

    out = tmp_path / "run"
    log = (out / "loss_log.csv").read_text().splitlines()
    assert log[0] == LOSS_CSV_HEADER
    assert len(log) == 7
    assert all(line.split(",")[-1] == "none" for line in log[1:])
    assert (out / "ckpt_000003.avq").exists()
    assert (out / "ckpt_000006.avq").exists()
    # the loop-end snapshot and the final alias hold the same state
    assert final.read_bytes() == (out / "ckpt_000006.avq").read_bytes()


# ------------------------------------------------------------- convergence


def test_pixel_loss_halves_within_200_steps(tmp_path, corpus16):
    cfg = TrainConfig(
        stage=0,
        image_size=16,
        downsample_factor=2,
        base_channels=16,
        codebook_size=64,
        batch_size=64,
        lr_peak=3e-3,
        warmup_steps=10,
        total_steps=2000,
        gan_warmup=10**6,
        checkpoint_every=10**6,
        dataset_dir="unused",
        out_dir=str(tmp_path / "run"),
        seed=3,
    )
    tr = Trainer(cfg, dataset=corpus16)
    first = tr.train_step(1)["loss_pixel"]
    for s in range(2, 200):
        tr.train_step(s)
    last = tr.train_step(200)["loss_pixel"]
    assert last < 0.5 * first, f"step1={first:.4f} step200={last:.4f}"
