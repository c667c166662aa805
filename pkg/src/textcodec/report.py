"""Figure and table emission for evaluation sweeps.

Rate curves are rendered to static image files next to the CSV/JSON
they are drawn from; the timing table is plain text with the fixed
reference row.
"""

from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import RatePoint

__all__ = ["plot_rate_accuracy", "plot_rate_psnr", "group_by_label"]


def group_by_label(points: list[RatePoint]) -> dict[str, list[RatePoint]]:
    series: dict[str, list[RatePoint]] = defaultdict(list)
    for p in points:
        series[p.label or "series"].append(p)
    for pts in series.values():
        pts.sort(key=lambda p: p.bpp)
    return dict(series)


def _plot_series(points, value_fn, ylabel, title, path):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for label, pts in group_by_label(points).items():
        xs = [p.bpp for p in pts]
        ys = [value_fn(p) for p in pts]
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xlabel("bits per pixel")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def plot_rate_accuracy(points: list[RatePoint], path: str | Path) -> Path:
    """Rate on x, recognition accuracy on y, one line per model label."""
    return _plot_series(
        points, lambda p: p.ocr_accuracy, "OCR accuracy", "Rate vs. OCR accuracy", path
    )


def plot_rate_psnr(points: list[RatePoint], path: str | Path) -> Path:
    """Rate on x, PSNR on y; exact reconstructions are dropped from the
    curve (infinite PSNR has no plottable value)."""
    finite = [p for p in points if math.isfinite(p.psnr_db)]
    return _plot_series(finite, lambda p: p.psnr_db, "PSNR (dB)", "Rate vs. PSNR", path)
