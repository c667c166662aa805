"""Residual dequantization network and its mixed-loss training.

A fully convolutional denoiser predicts the quantization-noise residual
of a degraded patch; subtracting the residual from the input gives the
restored image. Training mixes pixel MSE against the clean original
with the margin-thresholded blockwise DCT loss against the degraded
input, which keeps the output spectrally coherent with what the JPEG
stage actually transmitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .jpegdeg import dct_loss

__all__ = [
    "DnCnnConfig",
    "RestoreLossWeights",
    "DnCNN",
    "build_dncnn",
    "restore",
    "restore_tensor",
    "restore_loss",
    "train_dncnn",
]


@dataclass(frozen=True)
class DnCnnConfig:
    """Denoiser depth/width. depth counts parameterized conv layers:
    first conv+ReLU, (depth-2) conv+BN+ReLU blocks, final conv.
    Desk-scale default is depth 7, width 32; full scale is 17/64."""

    depth: int = 7
    width: int = 32
    in_channels: int = 1
    kernel: int = 3  # fixed 3x3
    input_patch: tuple[int, int] = (64, 256)

    def __post_init__(self) -> None:
        if self.depth < 3:
            raise ValueError(f"depth must be >= 3, got {self.depth}")
        if self.kernel != 3:
            raise ValueError("kernel is fixed at 3x3")


@dataclass(frozen=True)
class RestoreLossWeights:
    """lambda_mix blends MSE (weight lambda) with the DCT hinge loss
    (weight 1-lambda); tau is the hinge margin."""

    lambda_mix: float = 0.8
    tau: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.lambda_mix <= 1.0:
            raise ValueError(f"lambda_mix must be in [0,1], got {self.lambda_mix}")


class DnCNN(nn.Module):
    """Residual denoiser: forward() returns the predicted residual."""

    def __init__(self, cfg: DnCnnConfig):
        super().__init__()
        self.cfg = cfg
        w, k = cfg.width, cfg.kernel
        layers: list[nn.Module] = [
            nn.Conv2d(cfg.in_channels, w, k, padding=k // 2),
            nn.ReLU(inplace=True),
        ]
        for _ in range(cfg.depth - 2):
            layers += [
                nn.Conv2d(w, w, k, padding=k // 2, bias=False),
                nn.BatchNorm2d(w),
                nn.ReLU(inplace=True),
            ]
        layers.append(nn.Conv2d(w, cfg.in_channels, k, padding=k // 2))
        self.layers = nn.Sequential(*layers)
        # small final-layer init keeps the untrained model near identity
        with torch.no_grad():
            self.layers[-1].weight.mul_(0.05)
            self.layers[-1].bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.layers(x)


def build_dncnn(cfg: DnCnnConfig | None = None) -> DnCNN:
    return DnCNN(cfg or DnCnnConfig())


def restore_tensor(model: DnCNN, x: torch.Tensor, clamp: bool = False) -> torch.Tensor:
    """Restored batch: input minus predicted residual; clamp only at
    evaluation."""
    out = x - model(x)
    return out.clamp(0.0, 1.0) if clamp else out


def restore(model: DnCNN, x: np.ndarray) -> np.ndarray:
    """Evaluation path for a single grayscale image in [0, 1]."""
    model.eval()
    with torch.no_grad():
        t = torch.from_numpy(np.asarray(x, dtype=np.float32))[None, None]
        return restore_tensor(model, t, clamp=True)[0, 0].numpy()


def restore_loss(
    clean: torch.Tensor,
    degraded: torch.Tensor,
    restored: torch.Tensor,
    weights: RestoreLossWeights = RestoreLossWeights(),
) -> torch.Tensor:
    """lambda * MSE(clean, restored) + (1-lambda) * dct_loss(degraded, restored).

    The MSE targets the clean ground truth; the DCT term targets the
    degraded (quantized) input.
    """
    if clean.shape != restored.shape or degraded.shape != restored.shape:
        raise ValueError(
            f"shape mismatch: clean {tuple(clean.shape)}, degraded "
            f"{tuple(degraded.shape)}, restored {tuple(restored.shape)}"
        )
    mse = torch.mean((clean - restored) ** 2)
    hinge = dct_loss(degraded, restored, weights.tau)
    total = weights.lambda_mix * mse + (1.0 - weights.lambda_mix) * hinge
    if not torch.isfinite(total):
        raise ValueError("non-finite restoration loss")
    return total


@dataclass
class RestoreTrainResult:
    model: DnCNN
    losses: list[float] = field(default_factory=list)


def train_dncnn(
    pairs: list[tuple[np.ndarray, np.ndarray]],
    cfg: DnCnnConfig | None = None,
    weights: RestoreLossWeights = RestoreLossWeights(),
    steps: int = 800,
    seed: int = 0,
    batch_size: int = 16,
    lr: float = 1e-3,
) -> RestoreTrainResult:
    """Train on (clean, degraded) patch pairs; returns the model in eval
    mode with BN running statistics frozen, ready to act as the frozen
    first-stage restorer.

    Diverges loudly: loss above 10x the initial value for 100
    consecutive steps aborts.
    """
    cfg = cfg or DnCnnConfig()
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = DnCNN(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    clean_all = torch.from_numpy(np.stack([c for c, _ in pairs]))[:, None]
    degraded_all = torch.from_numpy(np.stack([d for _, d in pairs]))[:, None]
    losses: list[float] = []
    model.train()
    for step in range(steps):
        idxs = torch.from_numpy(rng.integers(0, len(pairs), size=batch_size))
        clean = clean_all[idxs]
        degraded = degraded_all[idxs]
        restored = restore_tensor(model, degraded, clamp=False)
        loss = restore_loss(clean, degraded, restored, weights)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
        if len(losses) > 100:
            initial = abs(losses[0]) + 1e-12
            if all(l > 10 * initial for l in losses[-100:]):
                raise RuntimeError(
                    f"restoration training diverged at step {step}: "
                    f"loss {losses[-1]:.4g} vs initial {losses[0]:.4g}"
                )
    model.eval()
    return RestoreTrainResult(model=model, losses=losses)
