"""Learned image codec: transforms, hyperprior, quantization, rate.

The backbone is a small strided convolutional autoencoder behind a
narrow interface (the published systems in this space plug in heavier
backbones; the training procedure does not depend on the choice). The
main transform downsamples by 16, the hyper transform by a further 4,
so inputs must have dimensions divisible by 64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .entropy import PROBABILITY_FLOOR, FactorizedPrior, gaussian_bin_probability

__all__ = [
    "MAIN_DOWNSAMPLE",
    "HYPER_DOWNSAMPLE",
    "TOTAL_DOWNSAMPLE",
    "SCALE_LOWER_BOUND",
    "CodecConfig",
    "RateEstimate",
    "TextImageCodec",
    "quantize",
    "rate",
    "rate_from_probabilities",
]

MAIN_DOWNSAMPLE = 16  # 4 stride-2 stages
HYPER_DOWNSAMPLE = 4  # 2 more stride-2 stages
TOTAL_DOWNSAMPLE = MAIN_DOWNSAMPLE * HYPER_DOWNSAMPLE
SCALE_LOWER_BOUND = 1e-3


@dataclass(frozen=True)
class CodecConfig:
    """Codec hyperparameters. Desk-scale defaults train in minutes on CPU."""

    channels_y: int = 64
    channels_z: int = 32
    backbone_width: int = 48
    in_channels: int = 1

    def __post_init__(self) -> None:
        for name in ("channels_y", "channels_z", "backbone_width", "in_channels"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class RateEstimate:
    """Estimated code length, split by latent. bpp = total bits / pixels."""

    bits_y: float
    bits_z: float
    bpp: float

    def __post_init__(self) -> None:
        for name in ("bits_y", "bits_z", "bpp"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")

    @classmethod
    def from_bits(cls, bits_y: float, bits_z: float, num_pixels: int) -> "RateEstimate":
        return cls(bits_y=bits_y, bits_z=bits_z, bpp=(bits_y + bits_z) / num_pixels)


def quantize(v: torch.Tensor, mode: str) -> torch.Tensor:
    """Uniform scalar quantization.

    ``round`` snaps to the nearest integer with ties away from zero;
    ``noise`` adds i.i.d. uniform noise on [-0.5, 0.5) as the
    differentiable training surrogate.
    """
    if mode == "round":
        return torch.floor(v.abs() + 0.5) * torch.sign(v)
    if mode == "noise":
        return v + torch.rand_like(v) - 0.5
    raise ValueError(f"unknown quantization mode {mode!r}")


def _check_input_dims(x: torch.Tensor) -> None:
    h, w = x.shape[-2], x.shape[-1]
    if h % TOTAL_DOWNSAMPLE or w % TOTAL_DOWNSAMPLE:
        raise ValueError(
            f"input dims {h}x{w} must be multiples of {TOTAL_DOWNSAMPLE}"
        )


class _Analysis(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        w = cfg.backbone_width
        self.net = nn.Sequential(
            nn.Conv2d(cfg.in_channels, w, 5, stride=2, padding=2),
            nn.LeakyReLU(inplace=True),
            nn.Conv2d(w, w, 5, stride=2, padding=2),
            nn.LeakyReLU(inplace=True),
            nn.Conv2d(w, w, 5, stride=2, padding=2),
            nn.LeakyReLU(inplace=True),
            nn.Conv2d(w, cfg.channels_y, 5, stride=2, padding=2),
        )

    def forward(self, x):
        return self.net(x)


class _Synthesis(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        w = cfg.backbone_width
        self.net = nn.Sequential(
            nn.ConvTranspose2d(cfg.channels_y, w, 5, stride=2, padding=2, output_padding=1),
            nn.LeakyReLU(inplace=True),
            nn.ConvTranspose2d(w, w, 5, stride=2, padding=2, output_padding=1),
            nn.LeakyReLU(inplace=True),
            nn.ConvTranspose2d(w, w, 5, stride=2, padding=2, output_padding=1),
            nn.LeakyReLU(inplace=True),
            nn.ConvTranspose2d(w, cfg.in_channels, 5, stride=2, padding=2, output_padding=1),
        )

    def forward(self, y):
        return self.net(y)


class _HyperAnalysis(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        w = cfg.backbone_width
        self.net = nn.Sequential(
            nn.Conv2d(cfg.channels_y, w, 3, stride=1, padding=1),
            nn.LeakyReLU(inplace=True),
            nn.Conv2d(w, w, 5, stride=2, padding=2),
            nn.LeakyReLU(inplace=True),
            nn.Conv2d(w, cfg.channels_z, 5, stride=2, padding=2),
        )

    def forward(self, y):
        return self.net(y)


class _HyperSynthesis(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        w = cfg.backbone_width
        self.net = nn.Sequential(
            nn.ConvTranspose2d(cfg.channels_z, w, 5, stride=2, padding=2, output_padding=1),
            nn.LeakyReLU(inplace=True),
            nn.ConvTranspose2d(w, w, 5, stride=2, padding=2, output_padding=1),
            nn.LeakyReLU(inplace=True),
            nn.Conv2d(w, 2 * cfg.channels_y, 3, stride=1, padding=1),
        )

    def forward(self, z):
        return self.net(z)


class TextImageCodec(nn.Module):
    """Main + hyper autoencoder pair with a factorized side-latent prior.

    Evaluation (round quantization) is deterministic and safe for
    concurrent read-only callers; training mutates parameters and is
    single-writer.
    """

    def __init__(self, cfg: CodecConfig | None = None):
        super().__init__()
        self.cfg = cfg or CodecConfig()
        self.g_a = _Analysis(self.cfg)
        self.g_s = _Synthesis(self.cfg)
        self.h_a = _HyperAnalysis(self.cfg)
        self.h_s = _HyperSynthesis(self.cfg)
        self.z_prior = FactorizedPrior(self.cfg.channels_z)

    def analyze(self, x: torch.Tensor) -> torch.Tensor:
        """Image (B, C, H, W) in [0,1] -> main latent (B, C_y, H/16, W/16)."""
        _check_input_dims(x)
        return self.g_a(x)

    def synthesize(self, y_hat: torch.Tensor, clamp: bool = True) -> torch.Tensor:
        """Main latent -> reconstruction; clamped to [0,1] for evaluation,
        unclamped during training."""
        x_hat = self.g_s(y_hat)
        return x_hat.clamp(0.0, 1.0) if clamp else x_hat

    def hyper_analyze(self, y: torch.Tensor) -> torch.Tensor:
        """Main latent -> side latent (B, C_z, H/64, W/64)."""
        return self.h_a(y)

    def hyper_synthesize(self, z_hat: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Side latent -> per-element (mean, scale) for the main latent.

        The scale is reparameterized through softplus with a fixed lower
        bound, so it is strictly positive for any weights.
        """
        params = self.h_s(z_hat)
        mean, raw_scale = params.chunk(2, dim=1)
        scale = F.softplus(raw_scale) + SCALE_LOWER_BOUND
        return mean, scale

    def forward(self, x: torch.Tensor, mode: str = "noise"):
        """Full codec pass returning everything the losses need.

        ``mode`` selects the quantization surrogate: "noise" during
        training, "round" for evaluation.
        """
        y = self.analyze(x)
        z = self.hyper_analyze(y)
        z_hat = quantize(z, mode)
        mean, scale = self.hyper_synthesize(z_hat)
        y_hat = quantize(y, mode)
        x_hat = self.synthesize(y_hat, clamp=mode == "round")
        p_y = gaussian_bin_probability(y_hat, mean, scale).clamp_min(PROBABILITY_FLOOR)
        p_z = self.z_prior.bin_probability(
            self.z_prior.channel_view(z_hat)
        ).clamp_min(PROBABILITY_FLOOR)
        return {
            "x_hat": x_hat,
            "y_hat": y_hat,
            "z_hat": z_hat,
            "mean": mean,
            "scale": scale,
            "p_y": p_y,
            "p_z": p_z,
        }


def rate_from_probabilities(p_y: torch.Tensor, p_z: torch.Tensor, num_pixels: int) -> RateEstimate:
    """Code length from per-element bin probabilities (already floored)."""
    bits_y = float(-torch.log2(p_y).sum())
    bits_z = float(-torch.log2(p_z).sum())
    return RateEstimate.from_bits(bits_y, bits_z, num_pixels)


def rate(
    y_hat: torch.Tensor,
    z_hat: torch.Tensor,
    prior_params: tuple[torch.Tensor, torch.Tensor],
    z_prior: FactorizedPrior,
    num_pixels: int,
) -> RateEstimate:
    """Estimated bits to code (y_hat, z_hat) under the learned priors.

    Per-bin probabilities are floored at 2^-15, so the estimate is
    always finite. ``num_pixels`` is H*W of the source image.
    """
    mean, scale = prior_params
    p_y = gaussian_bin_probability(y_hat, mean, scale).clamp_min(PROBABILITY_FLOOR)
    p_z = z_prior.bin_probability(z_prior.channel_view(z_hat)).clamp_min(PROBABILITY_FLOOR)
    return rate_from_probabilities(p_y, p_z, num_pixels)
