"""Extreme JPEG degradation and the 8x8 blockwise DCT machinery.

The degradation path downscales an image and recompresses it with
baseline JPEG at a configurable quality (quality 1 is the extreme
regime). The blockwise orthonormal DCT here is shared by the
restoration loss, which penalizes coefficient differences beyond a
fixed margin.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

__all__ = [
    "DegradeConfig",
    "DctBlockGrid",
    "DegradeError",
    "degrade",
    "upscale",
    "block_dct",
    "block_idct",
    "dct_loss",
    "dct_basis",
]


class DegradeError(ValueError):
    pass


@dataclass(frozen=True)
class DegradeConfig:
    """Downscale-then-JPEG degradation parameters.

    ``jpeg_quality`` follows the baseline JPEG quality scaling (1..100,
    1 = strongest quantization). Output dimensions after downscaling
    must remain multiples of 8.
    """

    downscale_factor: int = 2
    jpeg_quality: int = 1
    grayscale_only: bool = True

    def __post_init__(self) -> None:
        if self.downscale_factor < 1:
            raise DegradeError(f"downscale_factor must be >= 1, got {self.downscale_factor}")
        if not 1 <= self.jpeg_quality <= 100:
            raise DegradeError(f"jpeg_quality must be in [1,100], got {self.jpeg_quality}")


def _to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def _to_float(u: np.ndarray) -> np.ndarray:
    return np.asarray(u, dtype=np.float32) / 255.0


def degrade(x: np.ndarray, cfg: DegradeConfig) -> tuple[np.ndarray, int]:
    """Downscale ``x`` and round-trip it through JPEG at ``cfg.jpeg_quality``.

    Returns the degraded image (at the downscaled dimensions, values in
    [0, 1]) together with the compressed payload size in bytes.
    Deterministic: identical input and config produce a byte-identical
    JPEG payload.
    """
    x = np.asarray(x)
    if x.ndim != 2:
        raise DegradeError(f"expected a 2-D grayscale image, got shape {x.shape}")
    h, w = x.shape
    f = cfg.downscale_factor
    if (h // f) % 8 != 0 or (w // f) % 8 != 0 or h % f != 0 or w % f != 0:
        raise DegradeError(
            f"dims {h}x{w} with factor {f} do not yield multiples of 8 "
            f"({h / f:.1f}x{w / f:.1f})"
        )
    img = Image.fromarray(_to_uint8(x), mode="L")
    if f > 1:
        img = img.resize((w // f, h // f), Image.BOX)
    buf = io.BytesIO()
    img.save(buf, format="JPEG", quality=cfg.jpeg_quality)
    payload = buf.getvalue()
    decoded = Image.open(io.BytesIO(payload)).convert("L")
    return _to_float(np.array(decoded)), len(payload)


def upscale(x: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear upscale back to ``out_hw``; pairs a degraded image with
    its clean original for patch-aligned training."""
    h, w = out_hw
    img = Image.fromarray(_to_uint8(x), mode="L")
    return _to_float(np.array(img.resize((w, h), Image.BILINEAR)))


# ---------------------------------------------------------------------------
# Orthonormal 8x8 DCT-II, applied blockwise.


def dct_basis(n: int = 8) -> np.ndarray:
    """Orthonormal DCT-II basis matrix D such that X = D @ x @ D.T per block."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    d = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * math.sqrt(2.0 / n)
    d[0, :] = math.sqrt(1.0 / n)
    return d


_DCT8 = dct_basis(8)
_DCT8_T = torch.from_numpy(_DCT8)


@dataclass
class DctBlockGrid:
    """Blockwise DCT coefficients covering an image exactly.

    ``coefficients`` has shape [n_blocks_v, n_blocks_h, 8, 8].
    """

    coefficients: np.ndarray

    @property
    def image_shape(self) -> tuple[int, int]:
        nv, nh = self.coefficients.shape[:2]
        return nv * 8, nh * 8


def _split_blocks(x: np.ndarray) -> np.ndarray:
    h, w = x.shape
    if h % 8 != 0 or w % 8 != 0:
        raise DegradeError(f"dims {h}x{w} are not multiples of 8")
    return x.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)


def block_dct(x: np.ndarray) -> DctBlockGrid:
    """Orthonormal 2-D DCT-II over non-overlapping 8x8 blocks."""
    blocks = _split_blocks(np.asarray(x, dtype=np.float64))
    coeffs = np.einsum("ij,vhjk,lk->vhil", _DCT8, blocks, _DCT8)
    return DctBlockGrid(coefficients=coeffs)


def block_idct(grid: DctBlockGrid) -> np.ndarray:
    """Inverse of :func:`block_dct`; reconstructs the source image."""
    coeffs = np.asarray(grid.coefficients, dtype=np.float64)
    blocks = np.einsum("ji,vhjk,kl->vhil", _DCT8, coeffs, _DCT8)
    nv, nh = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(nv * 8, nh * 8)


def dct_loss(ref, rec, tau: float = 0.5):
    """Thresholded blockwise DCT discrepancy.

    Computes max(|DCT(ref_b) - DCT(rec_b)| - tau, 0) per coefficient of
    every non-overlapping 8x8 block, then averages over all coefficients
    and blocks. Differences below the margin ``tau`` cost nothing.
    Accepts numpy arrays or torch tensors with shape (..., H, W); the
    result is a torch scalar, differentiable with respect to ``rec``
    when ``rec`` is a tensor requiring grad. Note the loss is
    block-aligned: it is not invariant to pixel shifts.
    """
    ref_t = torch.as_tensor(ref)
    rec_t = torch.as_tensor(rec)
    if ref_t.shape != rec_t.shape:
        raise DegradeError(f"shape mismatch: {tuple(ref_t.shape)} vs {tuple(rec_t.shape)}")
    h, w = ref_t.shape[-2], ref_t.shape[-1]
    if h % 8 != 0 or w % 8 != 0:
        raise DegradeError(f"dims {h}x{w} are not multiples of 8")
    basis = _DCT8_T.to(rec_t.dtype)

    def blockwise(t):
        b = t.reshape(*t.shape[:-2], h // 8, 8, w // 8, 8)
        b = b.movedim(-3, -2)  # (..., hb, wb, 8, 8)
        return torch.einsum("ij,...jk,lk->...il", basis, b, basis)

    diff = (blockwise(ref_t.to(rec_t.dtype)) - blockwise(rec_t)).abs()
    return torch.clamp(diff - tau, min=0).mean()
