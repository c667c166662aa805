import math

import numpy as np
import pytest
import torch

from textcodec.codec import (
    CodecConfig,
    RateEstimate,
    TextImageCodec,
    quantize,
    rate,
    rate_from_probabilities,
)


@pytest.fixture(scope="module")
def small_codec():
    torch.manual_seed(0)
    return TextImageCodec(CodecConfig(channels_y=16, channels_z=8, backbone_width=12)).eval()


class TestShapes:
    def test_main_latent_shape_256x512(self):
        torch.manual_seed(1)
        codec = TextImageCodec(CodecConfig(channels_y=64, channels_z=32, backbone_width=16)).eval()
        x = torch.rand(1, 1, 256, 512)
        y = codec.analyze(x)
        assert tuple(y.shape) == (1, 64, 16, 32)

    def test_main_latent_shape_64x64(self, small_codec):
        y = small_codec.analyze(torch.rand(1, 1, 64, 64))
        assert tuple(y.shape) == (1, 16, 4, 4)

    def test_hyper_latent_shape(self, small_codec):
        y = small_codec.analyze(torch.rand(1, 1, 256, 512))
        z = small_codec.hyper_analyze(y)
        assert tuple(z.shape) == (1, 8, 4, 8)

    def test_prior_params_cover_y(self, small_codec):
        x = torch.rand(1, 1, 128, 192)
        y = small_codec.analyze(x)
        z = small_codec.hyper_analyze(y)
        mean, scale = small_codec.hyper_synthesize(quantize(z, "round"))
        assert mean.shape == y.shape
        assert scale.shape == y.shape

    def test_scale_strictly_positive_any_weights(self):
        torch.manual_seed(3)
        for seed in range(3):
            torch.manual_seed(seed)
            codec = TextImageCodec(CodecConfig(channels_y=8, channels_z=4, backbone_width=8))
            with torch.no_grad():
                for p in codec.h_s.parameters():
                    p.mul_(10.0)  # exaggerate to probe the bound
            z = torch.randn(1, 4, 2, 2) * 50
            with torch.no_grad():
                _, scale = codec.hyper_synthesize(z)
            assert float(scale.min()) > 0.0

    def test_shape_law_sweep(self, small_codec):
        for h in (64, 128, 256):
            for w in (64, 192, 320):
                x = torch.rand(1, 1, h, w)
                y = small_codec.analyze(x)
                assert tuple(y.shape) == (1, 16, h // 16, w // 16)
                z = small_codec.hyper_analyze(y)
                assert tuple(z.shape) == (1, 8, h // 64, w // 64)
                x_hat = small_codec.synthesize(quantize(y, "round"))
                assert x_hat.shape == x.shape

    def test_indivisible_dims_rejected(self, small_codec):
        with pytest.raises(ValueError, match="64"):
            small_codec.analyze(torch.rand(1, 1, 96, 128))

    def test_eval_determinism(self, small_codec):
        x = torch.rand(1, 1, 64, 128)
        with torch.no_grad():
            y1 = small_codec.analyze(x)
            y2 = small_codec.analyze(x)
        assert torch.equal(y1, y2)

    def test_synthesize_clamped_in_eval(self, small_codec):
        y_hat = torch.randn(1, 16, 4, 8) * 20
        x_hat = small_codec.synthesize(y_hat, clamp=True)
        assert float(x_hat.min()) >= 0.0
        assert float(x_hat.max()) <= 1.0
        unclamped = small_codec.synthesize(y_hat, clamp=False)
        assert float(unclamped.min()) < 0.0 or float(unclamped.max()) > 1.0


class TestQuantize:
    def test_round_half_away_from_zero(self):
        v = torch.tensor([0.2, -1.7, 3.5, -3.5, 2.5, 0.0])
        got = quantize(v, "round")
        assert torch.equal(got, torch.tensor([0.0, -2.0, 4.0, -4.0, 3.0, 0.0]))

    def test_round_idempotent(self):
        v = torch.randn(1000) * 5
        once = quantize(v, "round")
        assert torch.equal(quantize(once, "round"), once)

    def test_round_within_half(self):
        v = torch.randn(1000) * 5
        assert float((quantize(v, "round") - v).abs().max()) <= 0.5

    def test_noise_mode_monte_carlo_mean(self):
        torch.manual_seed(1234)
        v = torch.zeros(10**6)
        err = quantize(v, "noise") - v
        # mean of U[-0.5, 0.5) is 0 with sigma = 1/sqrt(12)
        bound = 3 * (1 / math.sqrt(12)) / math.sqrt(10**6)
        assert abs(float(err.mean())) < bound

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            quantize(torch.zeros(3), "stochastic")


class TestRate:
    def test_uniform_256_is_8_bits_per_symbol(self):
        n = 137
        p_y = torch.full((n,), 1.0 / 256.0)
        p_z = torch.ones(1)
        est = rate_from_probabilities(p_y, p_z, num_pixels=256 * 512)
        assert est.bits_y == pytest.approx(8 * n, abs=1e-6)
        assert est.bits_z == pytest.approx(0.0, abs=1e-9)

    def test_bpp_arithmetic(self):
        est = RateEstimate.from_bits(512.0, 0.0, 256 * 512)
        assert est.bpp == pytest.approx(0.00390625, abs=1e-12)

    def test_smaller_scale_at_mean_costs_fewer_bits(self):
        y = torch.zeros(1, 4, 2, 2)
        z = torch.zeros(1, 2, 1, 1)
        prior = __import__("textcodec.entropy", fromlist=["FactorizedPrior"]).FactorizedPrior(2)
        mean = torch.zeros_like(y)
        small = rate(y, z, (mean, torch.full_like(y, 0.1)), prior, 64 * 64)
        large = rate(y, z, (mean, torch.full_like(y, 4.0)), prior, 64 * 64)
        assert small.bits_y < large.bits_y

    def test_rate_nonnegative_and_recomputable(self, small_codec):
        x = torch.rand(2, 1, 64, 128)
        with torch.no_grad():
            out = small_codec(x, mode="round")
        est = rate_from_probabilities(out["p_y"], out["p_z"], num_pixels=2 * 64 * 128)
        assert est.bits_y >= 0 and est.bits_z >= 0
        assert est.bpp == pytest.approx((est.bits_y + est.bits_z) / (2 * 64 * 128), rel=1e-12)

    def test_probability_floor_keeps_rate_finite(self):
        y = torch.full((1, 1, 1, 1), 1000.0)  # far outside the prior
        mean = torch.zeros_like(y)
        scale = torch.full_like(y, 1e-3)
        prior = __import__("textcodec.entropy", fromlist=["FactorizedPrior"]).FactorizedPrior(1)
        est = rate(y, torch.zeros(1, 1, 1, 1), (mean, scale), prior, 64 * 64)
        assert math.isfinite(est.bits_y)
        # floored at 2^-15 -> 15 bits for the single symbol
        assert est.bits_y == pytest.approx(15.0, abs=1e-6)


class TestConfig:
    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            CodecConfig(channels_y=0)
        with pytest.raises(ValueError):
            CodecConfig(backbone_width=-1)
