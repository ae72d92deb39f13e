import pytest
import torch

from asymvq.blocks import AttnBlock, Downsample, ResnetBlock, Upsample, group_count
from asymvq.encoder import Encoder, GaussianLatent, sample_gaussian
from asymvq.errors import ConfigurationError, InputError


def small_encoder(**kw):
    args = dict(base_channels=8, ch_mult=(1, 2, 4), res_blocks=1, n_z=4)
    args.update(kw)
    return Encoder(**args)


def test_group_count_divides():
    assert group_count(64) == 32
    assert group_count(16) == 16
    assert group_count(48) == 24  # 32 does not divide 48
    assert group_count(7) == 7


def test_block_shapes():
    x = torch.randn(2, 8, 6, 6)
    assert ResnetBlock(8, 16)(x).shape == (2, 16, 6, 6)
    assert AttnBlock(8)(x).shape == (2, 8, 6, 6)
    assert Upsample(8)(x).shape == (2, 8, 12, 12)
    assert Downsample(8)(x).shape == (2, 8, 3, 3)


def test_latent_shape_64_to_16():
    # 64x64 input, f=4, n_z=4 -> 4x16x16
    torch.manual_seed(0)
    enc = small_encoder()
    z = enc.encode(torch.randn(2, 3, 64, 64))
    assert z.shape == (2, 4, 16, 16)
    assert enc.downsample_factor == 4


def test_deterministic_encoding():
    torch.manual_seed(0)
    enc = small_encoder()
    x = torch.randn(1, 3, 32, 32)
    assert torch.equal(enc.encode(x), enc.encode(x.clone()))


def test_indivisible_resolution_rejected():
    enc = small_encoder()
    with pytest.raises(InputError):
        enc.encode(torch.randn(1, 3, 30, 32))


def test_zeroed_final_conv_gives_zero_latent():
    torch.manual_seed(1)
    enc = small_encoder()
    with torch.no_grad():
        enc.conv_out.weight.zero_()
        enc.conv_out.bias.zero_()
    for _ in range(3):
        z = enc.encode(torch.randn(1, 3, 32, 32))
        assert torch.equal(z, torch.zeros_like(z))


def test_kl_mode_channel_split():
    torch.manual_seed(2)
    enc = small_encoder(kl_mode=True)
    x = torch.randn(1, 3, 32, 32)
    g = enc.encode_gaussian(x)
    raw = enc(x)
    assert torch.equal(g.mu, raw[:, 0:4])
    assert torch.equal(g.log_var, raw[:, 4:8])


def test_mode_mismatch_errors():
    with pytest.raises(ConfigurationError):
        small_encoder(kl_mode=True).encode(torch.randn(1, 3, 32, 32))
    with pytest.raises(ConfigurationError):
        small_encoder().encode_gaussian(torch.randn(1, 3, 32, 32))


def test_sample_with_zero_noise_is_mean():
    g = GaussianLatent(mu=torch.randn(1, 4, 2, 2), log_var=torch.randn(1, 4, 2, 2))
    assert torch.equal(sample_gaussian(g, torch.zeros_like(g.mu)), g.mu)


def test_sample_variance_matches_log_var():
    # Monte-Carlo check at one fixed location over 1e5 draws
    torch.manual_seed(3)
    log_var = 0.8
    g = GaussianLatent(
        mu=torch.full((100_000, 1, 1, 1), 2.0),
        log_var=torch.full((100_000, 1, 1, 1), log_var),
    )
    draws = sample_gaussian(g)
    observed = draws.var().item()
    expected = torch.tensor(log_var).exp().item()
    assert abs(observed - expected) / expected < 0.05


def test_sample_noise_shape_checked():
    g = GaussianLatent(mu=torch.zeros(1, 4, 2, 2), log_var=torch.zeros(1, 4, 2, 2))
    with pytest.raises(InputError):
        sample_gaussian(g, torch.zeros(1, 4, 2, 3))
