"""Entropy models and the real entropy coder validating rate estimates.

The quantized main latent is modeled per element by a conditional
Gaussian integrated over unit bins; the side latent by a learned
non-parametric factorized CDF (a small monotone per-channel network).
A binary arithmetic-coded bitstream implements the same models with
16-bit frequency tables, so measured payload sizes track the analytic
rate estimate closely. All integers in the wire format are big-endian.
"""

from __future__ import annotations

import math
import struct

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import ndtr
from torch import nn

__all__ = [
    "PROBABILITY_FLOOR",
    "FactorizedPrior",
    "gaussian_bin_probability",
    "RangeEncoder",
    "RangeDecoder",
    "BitstreamError",
    "MalformedHeader",
    "DimensionMismatch",
    "TruncatedPayload",
    "encode_bitstream",
    "decode_bitstream",
    "gaussian_symbol_tables",
    "uniform_symbol_tables",
    "encode_symbols",
    "decode_symbols",
]

PROBABILITY_FLOOR = 2.0**-15

# arithmetic coder precision
_TOTAL = 1 << 16
_ESC_RESERVE = 16
_RAW_BITS = 32


class BitstreamError(ValueError):
    pass


class MalformedHeader(BitstreamError):
    pass


class DimensionMismatch(BitstreamError):
    pass


class TruncatedPayload(BitstreamError):
    pass


# ---------------------------------------------------------------------------
# Probability models


def gaussian_bin_probability(values: torch.Tensor, mean: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    """Mass of the unit bin centered at ``values`` under N(mean, scale).

    Evaluated symmetrically around the mean for numerical stability.
    ``values`` may be non-integer (additive-noise surrogate during
    training). No probability floor is applied here.
    """
    centered = (values - mean).abs()
    upper = torch.special.ndtr((0.5 - centered) / scale)
    lower = torch.special.ndtr((-0.5 - centered) / scale)
    return (upper - lower).clamp_min(0.0)


class FactorizedPrior(nn.Module):
    """Learned factorized prior over one latent channel dimension.

    Each channel owns a tiny monotone network whose output is a CDF;
    unit-bin masses come from CDF differences. Used to model the side
    latent, and reusable as a density model for any channelwise code.
    """

    def __init__(self, channels: int, filters: tuple[int, ...] = (3, 3, 3), init_scale: float = 10.0):
        super().__init__()
        self.channels = channels
        self.filters = tuple(filters)
        dims = (1,) + self.filters + (1,)
        scale = init_scale ** (1.0 / (len(self.filters) + 1))
        self._matrices = nn.ParameterList()
        self._biases = nn.ParameterList()
        self._factors = nn.ParameterList()
        for k in range(len(dims) - 1):
            init = math.log(math.expm1(1.0 / scale / dims[k + 1]))
            self._matrices.append(nn.Parameter(torch.full((channels, dims[k + 1], dims[k]), init)))
            bias = torch.empty(channels, dims[k + 1], 1).uniform_(-0.5, 0.5)
            self._biases.append(nn.Parameter(bias))
            if k < len(dims) - 2:
                self._factors.append(nn.Parameter(torch.zeros(channels, dims[k + 1], 1)))

    def _logits_cdf(self, x: torch.Tensor) -> torch.Tensor:
        # x: (channels, 1, n) -> logits of the CDF, same shape
        for k, matrix in enumerate(self._matrices):
            x = torch.bmm(F.softplus(matrix), x) + self._biases[k]
            if k < len(self._factors):
                x = x + torch.tanh(self._factors[k]) * torch.tanh(x)
        return x

    def bin_probability(self, values: torch.Tensor) -> torch.Tensor:
        """Unit-bin mass at ``values``, shaped (channels, n)."""
        if values.dim() != 2 or values.shape[0] != self.channels:
            raise ValueError(f"expected shape ({self.channels}, n), got {tuple(values.shape)}")
        v = values.unsqueeze(1)
        lower = self._logits_cdf(v - 0.5)
        upper = self._logits_cdf(v + 0.5)
        sign = -torch.sign(lower + upper).detach()
        prob = (torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower)).abs()
        return prob.squeeze(1)

    def channel_view(self, latent: torch.Tensor) -> torch.Tensor:
        """Flatten a (C, H, W) or (B, C, H, W) latent to (C, n)."""
        if latent.dim() == 4:
            latent = latent.movedim(1, 0).reshape(self.channels, -1)
        elif latent.dim() == 3:
            latent = latent.reshape(self.channels, -1)
        else:
            raise ValueError(f"unsupported latent shape {tuple(latent.shape)}")
        return latent


# ---------------------------------------------------------------------------
# Arithmetic coder (32-bit, bit-oriented, 16-bit frequency totals)


class _BitWriter:
    def __init__(self) -> None:
        self._bytes = bytearray()
        self._acc = 0
        self._n = 0

    def write(self, bit: int) -> None:
        self._acc = (self._acc << 1) | bit
        self._n += 1
        if self._n == 8:
            self._bytes.append(self._acc)
            self._acc = 0
            self._n = 0

    def getvalue(self) -> bytes:
        if self._n:
            return bytes(self._bytes) + bytes([self._acc << (8 - self._n)])
        return bytes(self._bytes)


class _BitReader:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def read(self) -> int:
        byte_idx = self._pos >> 3
        if byte_idx >= len(self._data):
            self._pos += 1
            return 0  # zero-padded tail
        bit = (self._data[byte_idx] >> (7 - (self._pos & 7))) & 1
        self._pos += 1
        return bit


_MASK = (1 << 32) - 1
_HALF = 1 << 31
_QUARTER = 1 << 30
_THREE_QUARTERS = 3 << 30


class RangeEncoder:
    """Arithmetic encoder over cumulative frequency intervals.

    ``encode(cum_lo, cum_hi, total)`` narrows the interval to the symbol
    with cumulative range [cum_lo, cum_hi) out of ``total`` (<= 2^16).
    """

    def __init__(self) -> None:
        self._low = 0
        self._high = _MASK
        self._pending = 0
        self._writer = _BitWriter()

    def _emit(self, bit: int) -> None:
        self._writer.write(bit)
        opposite = 1 - bit
        for _ in range(self._pending):
            self._writer.write(opposite)
        self._pending = 0

    def encode(self, cum_lo: int, cum_hi: int, total: int) -> None:
        if not 0 <= cum_lo < cum_hi <= total <= _TOTAL:
            raise ValueError(f"bad interval ({cum_lo}, {cum_hi}, {total})")
        span = self._high - self._low + 1
        self._high = self._low + span * cum_hi // total - 1
        self._low = self._low + span * cum_lo // total
        while True:
            if self._high < _HALF:
                self._emit(0)
            elif self._low >= _HALF:
                self._emit(1)
                self._low -= _HALF
                self._high -= _HALF
            elif self._low >= _QUARTER and self._high < _THREE_QUARTERS:
                self._pending += 1
                self._low -= _QUARTER
                self._high -= _QUARTER
            else:
                break
            self._low <<= 1
            self._high = (self._high << 1) | 1

    def encode_raw(self, value: int, nbits: int) -> None:
        for shift in range(nbits - 1, -1, -1):
            bit = (value >> shift) & 1
            self.encode(bit, bit + 1, 2)

    def finish(self) -> bytes:
        self._pending += 1
        self._emit(0 if self._low < _QUARTER else 1)
        return self._writer.getvalue()


class RangeDecoder:
    def __init__(self, data: bytes) -> None:
        self._reader = _BitReader(data)
        self._low = 0
        self._high = _MASK
        self._value = 0
        for _ in range(32):
            self._value = (self._value << 1) | self._reader.read()

    def decode_target(self, total: int) -> int:
        span = self._high - self._low + 1
        return ((self._value - self._low + 1) * total - 1) // span

    def consume(self, cum_lo: int, cum_hi: int, total: int) -> None:
        span = self._high - self._low + 1
        self._high = self._low + span * cum_hi // total - 1
        self._low = self._low + span * cum_lo // total
        while True:
            if self._high < _HALF:
                pass
            elif self._low >= _HALF:
                self._low -= _HALF
                self._high -= _HALF
                self._value -= _HALF
            elif self._low >= _QUARTER and self._high < _THREE_QUARTERS:
                self._low -= _QUARTER
                self._high -= _QUARTER
                self._value -= _QUARTER
            else:
                break
            self._low <<= 1
            self._high = (self._high << 1) | 1
            self._value = (self._value << 1) | self._reader.read()

    def decode_raw(self, nbits: int) -> int:
        value = 0
        for _ in range(nbits):
            bit = self.decode_target(2)
            self.consume(bit, bit + 1, 2)
            value = (value << 1) | bit
        return value


# ---------------------------------------------------------------------------
# Frequency tables
#
# Each element gets a support window of integer bins plus a shared
# escape symbol (raw 32-bit fallback keeps coding lossless for any
# integer). In-support bins carry frequency >= 2 out of 2^16, matching
# the 2^-15 probability floor of the analytic estimate.


def _quantize_freqs(probs: np.ndarray) -> np.ndarray:
    """Map per-row bin probabilities to integer frequencies.

    probs: (n_rows, n_bins). Every bin gets >= 2; escape keeps the rest.
    Returns cumulative tables of shape (n_rows, n_bins + 1); the escape
    interval for row i is [cum[i, -1], _TOTAL).
    """
    n_bins = probs.shape[1]
    scale = _TOTAL - _ESC_RESERVE - 2 * n_bins
    if scale <= 0:
        raise ValueError(f"too many bins for 16-bit tables: {n_bins}")
    freqs = 2 + np.floor(np.clip(probs, 0.0, 1.0) * scale).astype(np.int64)
    cums = np.zeros((probs.shape[0], n_bins + 1), dtype=np.int64)
    np.cumsum(freqs, axis=1, out=cums[:, 1:])
    return cums


def gaussian_symbol_tables(
    means: np.ndarray, scales: np.ndarray, max_half_width: int = 96
) -> tuple[np.ndarray, np.ndarray]:
    """Per-element cumulative tables under N(mean, scale) unit bins.

    Returns (lo, cums): lo[i] is the first integer of element i's
    support, cums[i] its cumulative frequency table.
    """
    means = np.asarray(means, dtype=np.float64).ravel()
    scales = np.asarray(scales, dtype=np.float64).ravel()
    centers = np.floor(np.abs(means) + 0.5) * np.sign(means)  # round half away
    half_width = int(np.clip(math.ceil(6.0 * float(scales.max()) + 2.0), 2, max_half_width))
    offsets = np.arange(-half_width, half_width + 1, dtype=np.float64)
    grid = centers[:, None] + offsets[None, :]
    upper = ndtr((grid + 0.5 - means[:, None]) / scales[:, None])
    lower = ndtr((grid - 0.5 - means[:, None]) / scales[:, None])
    cums = _quantize_freqs(upper - lower)
    lo = (centers - half_width).astype(np.int64)
    return lo, cums


def uniform_symbol_tables(n_elements: int, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
    """Equal-frequency tables over the integer alphabet [lo, hi]."""
    n_bins = hi - lo + 1
    probs = np.full((1, n_bins), 1.0 / n_bins)
    cums = np.repeat(_quantize_freqs(probs), n_elements, axis=0)
    return np.full(n_elements, lo, dtype=np.int64), cums


def factorized_symbol_tables(
    prior: FactorizedPrior, n_per_channel: int, half_width: int = 64
) -> tuple[np.ndarray, np.ndarray]:
    """Per-element tables for a channelwise factorized prior.

    Every element of channel c shares that channel's table; rows are
    repeated to match the channel-major element order.
    """
    grid = torch.arange(-half_width, half_width + 1, dtype=torch.float32)
    grid = grid.unsqueeze(0).expand(prior.channels, -1)
    with torch.no_grad():
        probs = prior.bin_probability(grid).double().cpu().numpy()
    cums = _quantize_freqs(probs)
    lo = np.full(prior.channels, -half_width, dtype=np.int64)
    return (
        np.repeat(lo, n_per_channel),
        np.repeat(cums, n_per_channel, axis=0),
    )


def encode_symbols(enc: RangeEncoder, symbols: np.ndarray, lo: np.ndarray, cums: np.ndarray) -> None:
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    n_bins = cums.shape[1] - 1
    for i, v in enumerate(symbols):
        k = v - lo[i]
        row = cums[i]
        if 0 <= k < n_bins:
            enc.encode(int(row[k]), int(row[k + 1]), _TOTAL)
        else:  # escape + raw value
            enc.encode(int(row[n_bins]), _TOTAL, _TOTAL)
            enc.encode_raw(int(v) & 0xFFFFFFFF, _RAW_BITS)


def decode_symbols(dec: RangeDecoder, n: int, lo: np.ndarray, cums: np.ndarray) -> np.ndarray:
    out = np.empty(n, dtype=np.int64)
    n_bins = cums.shape[1] - 1
    for i in range(n):
        row = cums[i]
        target = dec.decode_target(_TOTAL)
        if target >= row[n_bins]:
            dec.consume(int(row[n_bins]), _TOTAL, _TOTAL)
            raw = dec.decode_raw(_RAW_BITS)
            if raw >= 1 << 31:
                raw -= 1 << 32
            out[i] = raw
        else:
            k = int(np.searchsorted(row, target, side="right")) - 1
            dec.consume(int(row[k]), int(row[k + 1]), _TOTAL)
            out[i] = lo[i] + k
    return out


# ---------------------------------------------------------------------------
# Bitstream container

_MAGIC = b"TFIC"
_VERSION = 1
_HEADER = struct.Struct(">4sBIIHH")  # magic, version, H, W, C_y, C_z


def _require_integer(latent: torch.Tensor, name: str) -> np.ndarray:
    arr = latent.detach().cpu().numpy()
    rounded = np.rint(arr)
    if not np.allclose(arr, rounded, atol=1e-6):
        raise ValueError(f"{name} latents must be integer-valued for entropy coding")
    return rounded.astype(np.int64)


def encode_bitstream(
    y_hat: torch.Tensor,
    z_hat: torch.Tensor,
    means: torch.Tensor,
    scales: torch.Tensor,
    z_prior: FactorizedPrior,
    image_hw: tuple[int, int],
) -> bytes:
    """Serialize quantized latents into the container format.

    Latent tensors are (C, H', W'). The y payload is coded under the
    conditional Gaussian given by (means, scales); the z payload under
    the factorized prior. Decoding recomputes the Gaussian parameters
    from the decoded side latent, so both sides must come from the same
    model in eval mode.
    """
    h, w = image_hw
    y_np = _require_integer(y_hat, "y")
    z_np = _require_integer(z_hat, "z")
    c_y, c_z = y_np.shape[0], z_np.shape[0]

    z_enc = RangeEncoder()
    lo_z, cums_z = factorized_symbol_tables(z_prior, z_np.shape[1] * z_np.shape[2])
    encode_symbols(z_enc, z_np.reshape(c_z, -1), lo_z, cums_z)
    z_payload = z_enc.finish()

    y_enc = RangeEncoder()
    lo_y, cums_y = gaussian_symbol_tables(
        means.detach().cpu().numpy(), scales.detach().cpu().numpy()
    )
    encode_symbols(y_enc, y_np, lo_y, cums_y)
    y_payload = y_enc.finish()

    header = _HEADER.pack(_MAGIC, _VERSION, h, w, c_y, c_z)
    return (
        header
        + struct.pack(">I", len(z_payload))
        + z_payload
        + struct.pack(">I", len(y_payload))
        + y_payload
    )


def decode_bitstream(
    data: bytes, z_prior: FactorizedPrior, hyper_synthesize
) -> tuple[torch.Tensor, torch.Tensor]:
    """Inverse of :func:`encode_bitstream`.

    ``hyper_synthesize`` maps the decoded side latent (1, C_z, h, w) to
    (means, scales) for the main latent. Returns float tensors
    (y_hat, z_hat) shaped (C, H', W').
    """
    if len(data) < _HEADER.size:
        raise MalformedHeader(f"stream of {len(data)} bytes is shorter than the header")
    magic, version, h, w, c_y, c_z = _HEADER.unpack_from(data, 0)
    if magic != _MAGIC:
        raise MalformedHeader(f"bad magic {magic!r}")
    if version != _VERSION:
        raise MalformedHeader(f"unsupported version {version}")
    if h % 64 or w % 64 or h == 0 or w == 0 or c_y == 0 or c_z == 0:
        raise DimensionMismatch(f"implausible dimensions H={h} W={w} C_y={c_y} C_z={c_z}")
    if c_z != z_prior.channels:
        raise DimensionMismatch(f"stream C_z={c_z} but prior has {z_prior.channels} channels")

    pos = _HEADER.size

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedPayload(f"need {n} bytes at offset {pos}, have {len(data) - pos}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    (len_z,) = struct.unpack(">I", take(4))
    z_payload = take(len_z)
    (len_y,) = struct.unpack(">I", take(4))
    y_payload = take(len_y)

    zh, zw = h // 64, w // 64
    lo_z, cums_z = factorized_symbol_tables(z_prior, zh * zw)
    z_np = decode_symbols(RangeDecoder(z_payload), c_z * zh * zw, lo_z, cums_z)
    z_hat = torch.from_numpy(z_np.reshape(c_z, zh, zw).astype(np.float32))

    means, scales = hyper_synthesize(z_hat.unsqueeze(0))
    yh, yw = h // 16, w // 16
    if means.shape[-3:] != (c_y, yh, yw):
        raise DimensionMismatch(
            f"prior parameters shaped {tuple(means.shape)} do not match latent ({c_y},{yh},{yw})"
        )
    lo_y, cums_y = gaussian_symbol_tables(
        means.detach().cpu().numpy(), scales.detach().cpu().numpy()
    )
    y_np = decode_symbols(RangeDecoder(y_payload), c_y * yh * yw, lo_y, cums_y)
    y_hat = torch.from_numpy(y_np.reshape(c_y, yh, yw).astype(np.float32))
    return y_hat, z_hat
