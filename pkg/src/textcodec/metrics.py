"""Evaluation substrate: edit distance, OCR accuracy, PSNR, stage timing.

All metric functions are pure and thread-safe. The timing harness runs
stages serially on a single worker to avoid contention skew.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "RatePoint",
    "TimingReport",
    "levenshtein",
    "ocr_accuracy",
    "psnr",
    "time_stages",
    "format_timing_table",
    "write_rate_csv",
    "read_rate_csv",
    "write_rate_json",
    "read_rate_json",
    "REFERENCE_TIMINGS_MS",
]

# Reference timing row printed (never asserted) alongside measured values:
# full-scale encode/OCR milliseconds per image, mean and std.
REFERENCE_TIMINGS_MS = {"encode": (12.9, 1.8), "ocr": (24.1, 3.3)}


def levenshtein(a: str, b: str) -> int:
    """Minimum number of single-character insertions, deletions or
    substitutions required to turn ``a`` into ``b``.

    Classic two-row dynamic program, O(len(a) * len(b)).
    """
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)

    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a):
        current = [i + 1]
        for j, cb in enumerate(b):
            insertion = previous[j + 1] + 1
            deletion = current[j] + 1
            substitution = previous[j] + (ca != cb)
            current.append(min(insertion, deletion, substitution))
        previous = current
    return previous[-1]


def _alphanumeric(s: str) -> str:
    return "".join(ch for ch in s if ch.isalnum())


def ocr_accuracy(gt: str, pred: str, case_sensitive: bool = False) -> float:
    """Recognition accuracy: 1 - edit_distance / max(len) over the
    alphanumeric characters of both strings.

    Punctuation and whitespace are stripped from both sides before the
    distance and the lengths are computed, so the value is invariant
    under their insertion. Comparison is case-insensitive unless
    ``case_sensitive`` is set. When both filtered strings are empty the
    accuracy is 1.0 ("no text, none found" is a correct recognition).
    Result is always in [0, 1].
    """
    g = _alphanumeric(gt)
    t = _alphanumeric(pred)
    if not case_sensitive:
        g = g.casefold()
        t = t.casefold()
    longest = max(len(g), len(t))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(g, t) / longest


def psnr(x: np.ndarray, y: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images scaled to [0, 1].

    Returns ``math.inf`` when the images are identical (MSE = 0).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


@dataclass
class RatePoint:
    """One evaluation record: rate, recognition accuracy, fidelity, timing."""

    bpp: float
    ocr_accuracy: float
    psnr_db: float  # math.inf when reconstruction is exact
    encode_ms: tuple[float, float] = (0.0, 0.0)  # (mean, std)
    ocr_ms: tuple[float, float] = (0.0, 0.0)
    label: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.ocr_accuracy <= 1.0:
            raise ValueError(f"accuracy outside [0,1]: {self.ocr_accuracy}")
        if self.bpp < 0.0:
            raise ValueError(f"negative bpp: {self.bpp}")


@dataclass
class TimingReport:
    """Per-image stage timings in milliseconds: (mean, std) pairs.

    The std is computed across repetitions of the whole test set (each
    repetition contributes its per-image mean), so a single repetition
    reports std 0.
    """

    encode_ms: tuple[float, float]
    ocr_ms: tuple[float, float]
    encode_over_ocr: float
    num_images: int
    repetitions: int


def time_stages(
    encode_fn: Callable,
    ocr_fn: Callable,
    test_set: Sequence,
    repetitions: int = 3,
    warmup: int = 1,
) -> TimingReport:
    """Measure per-image encode and OCR wall-clock times over ``test_set``.

    Uses a monotonic clock and excludes model loading; ``encode_fn``
    should cover analysis, quantization and rate estimation. Warm-up
    passes are run first and discarded.
    """
    if not test_set:
        raise ValueError("empty test set")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")

    for _ in range(warmup):
        for item in test_set:
            encode_fn(item)
            ocr_fn(item)

    encode_rep_means = []
    ocr_rep_means = []
    for _ in range(repetitions):
        enc_times = []
        ocr_times = []
        for item in test_set:
            t0 = time.perf_counter()
            encode_fn(item)
            t1 = time.perf_counter()
            ocr_fn(item)
            t2 = time.perf_counter()
            enc_times.append((t1 - t0) * 1e3)
            ocr_times.append((t2 - t1) * 1e3)
        encode_rep_means.append(float(np.mean(enc_times)))
        ocr_rep_means.append(float(np.mean(ocr_times)))

    enc_mean = float(np.mean(encode_rep_means))
    ocr_mean = float(np.mean(ocr_rep_means))
    enc_std = float(np.std(encode_rep_means)) if repetitions > 1 else 0.0
    ocr_std = float(np.std(ocr_rep_means)) if repetitions > 1 else 0.0
    return TimingReport(
        encode_ms=(enc_mean, enc_std),
        ocr_ms=(ocr_mean, ocr_std),
        encode_over_ocr=enc_mean / ocr_mean if ocr_mean > 0 else math.inf,
        num_images=len(test_set),
        repetitions=repetitions,
    )


def format_timing_table(report: TimingReport) -> str:
    """Render a timing report as a small text table.

    Layout: one row per configuration, columns for the encode and OCR
    stages as "mean +/- std" milliseconds. A fixed full-scale reference
    row is always printed for context and never asserted against.
    """
    ref_e = REFERENCE_TIMINGS_MS["encode"]
    ref_o = REFERENCE_TIMINGS_MS["ocr"]
    lines = [
        f"{'':14s}  {'Encoding':>16s}  {'OCR module':>16s}",
        "{:14s}  {:>16s}  {:>16s}".format(
            "measured",
            f"{report.encode_ms[0]:.1f} +/- {report.encode_ms[1]:.1f}",
            f"{report.ocr_ms[0]:.1f} +/- {report.ocr_ms[1]:.1f}",
        ),
        "{:14s}  {:>16s}  {:>16s}".format(
            "reference",
            f"{ref_e[0]:.1f} +/- {ref_e[1]:.1f}",
            f"{ref_o[0]:.1f} +/- {ref_o[1]:.1f}",
        ),
        f"encode/OCR time ratio (measured): {report.encode_over_ocr:.3f}",
    ]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Rate-point serialization: JSON array of records, CSV for the plotter.


def _point_to_jsonable(p: RatePoint) -> dict:
    d = asdict(p)
    if math.isinf(d["psnr_db"]):
        d["psnr_db"] = "inf"
    return d


def _point_from_jsonable(d: dict) -> RatePoint:
    d = dict(d)
    if d.get("psnr_db") == "inf":
        d["psnr_db"] = math.inf
    d["encode_ms"] = tuple(d.get("encode_ms", (0.0, 0.0)))
    d["ocr_ms"] = tuple(d.get("ocr_ms", (0.0, 0.0)))
    return RatePoint(**d)


def write_rate_json(points: Iterable[RatePoint], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump([_point_to_jsonable(p) for p in points], f, indent=2)


def read_rate_json(path: str | Path) -> list[RatePoint]:
    with open(path, encoding="utf-8") as f:
        return [_point_from_jsonable(d) for d in json.load(f)]


def write_rate_csv(points: Iterable[RatePoint], path: str | Path) -> None:
    """Curve emission: one row per rate point (label, bpp, accuracy, psnr)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["label", "bpp", "ocr_accuracy", "psnr_db"])
        for p in points:
            psnr_val = "inf" if math.isinf(p.psnr_db) else f"{p.psnr_db:.6f}"
            w.writerow([p.label, f"{p.bpp:.8f}", f"{p.ocr_accuracy:.6f}", psnr_val])


def read_rate_csv(path: str | Path) -> list[RatePoint]:
    points = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            points.append(
                RatePoint(
                    bpp=float(row["bpp"]),
                    ocr_accuracy=float(row["ocr_accuracy"]),
                    psnr_db=math.inf if row["psnr_db"] == "inf" else float(row["psnr_db"]),
                    label=row.get("label", ""),
                )
            )
    return points
