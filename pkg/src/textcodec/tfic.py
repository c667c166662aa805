"""Two-stage end-to-end codec training.

Stage 1 pretrains the codec on distortion + rate for a target rate
point set by the distortion weight. Stage 2 drops the distortion term
and fine-tunes every codec weight through a frozen text recognizer, so
the reconstruction keeps what the recognizer needs.

Conventions fixed here: distortion is mean squared error on [0,1]
pixels; the rate term is nats per pixel inside the optimized total
(reported as bits per pixel in the logs); the recognition term is mean
per-position cross-entropy over the ground-truth line crops.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import state_hash
from .codec import TextImageCodec, quantize, rate_from_probabilities
from .entropy import PROBABILITY_FLOOR, gaussian_bin_probability
from .metrics import RatePoint, ocr_accuracy, psnr
from .recognizer import TextRecognizer, is_frozen, ocr_loss_batch, prepare_patch_tensor
from .synth import DatasetManifest, WordAnnotation, line_regions, load_item

__all__ = [
    "TficLossWeights",
    "LossBreakdown",
    "TrainingDiverged",
    "PageSample",
    "load_page_samples",
    "total_loss",
    "stage1_pretrain",
    "stage2_finetune",
    "evaluate_codec",
]

LN2 = math.log(2.0)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class TficLossWeights:
    """Loss weights. Stage 1 runs with gamma_ocr = 0; stage 2 with
    lambda_dist = 0 and gamma_ocr = 0.1."""

    lambda_dist: float
    gamma_ocr: float

    def __post_init__(self) -> None:
        if self.lambda_dist < 0 or self.gamma_ocr < 0:
            raise ValueError("loss weights must be non-negative")

    @classmethod
    def stage1(cls, lambda_dist: float) -> "TficLossWeights":
        return cls(lambda_dist=lambda_dist, gamma_ocr=0.0)

    @classmethod
    def stage2(cls, gamma_ocr: float = 0.1) -> "TficLossWeights":
        return cls(lambda_dist=0.0, gamma_ocr=gamma_ocr)


@dataclass
class LossBreakdown:
    """Per-step loss record. ``rate_bits`` is bits per pixel; the total
    recombines as lambda*dist + rate_bits*ln(2) + gamma*ocr."""

    dist: float
    rate_bits: float
    ocr: float
    total: float

    def recombined(self, weights: TficLossWeights) -> float:
        return weights.lambda_dist * self.dist + self.rate_bits * LN2 + weights.gamma_ocr * self.ocr


def total_loss(
    x: torch.Tensor,
    x_hat: torch.Tensor,
    p_y: torch.Tensor,
    p_z: torch.Tensor,
    ocr: torch.Tensor | None,
    weights: TficLossWeights,
) -> tuple[torch.Tensor, LossBreakdown]:
    """Weighted sum of distortion, rate and recognition terms.

    Returns the differentiable total and the logged breakdown. Raises
    :class:`ValueError` if any component is non-finite (the trainer
    re-raises with the step index attached).
    """
    num_pixels = x.shape[0] * x.shape[-2] * x.shape[-1]
    dist = torch.mean((x - x_hat) ** 2)
    rate_nats_pp = -(torch.log(p_y).sum() + torch.log(p_z).sum()) / num_pixels
    ocr_term = ocr if ocr is not None else torch.zeros((), dtype=dist.dtype)
    total = weights.lambda_dist * dist + rate_nats_pp + weights.gamma_ocr * ocr_term
    for name, value in (("dist", dist), ("rate", rate_nats_pp), ("ocr", ocr_term), ("total", total)):
        if not torch.isfinite(value):
            raise ValueError(f"non-finite {name} component")
    breakdown = LossBreakdown(
        dist=float(dist.detach()),
        rate_bits=float(rate_nats_pp.detach()) / LN2,
        ocr=float(ocr_term.detach()),
        total=float(total.detach()),
    )
    return total, breakdown


# ---------------------------------------------------------------------------
# Page corpus


@dataclass
class PageSample:
    image: np.ndarray  # (H, W) in [0, 1]
    lines: list[tuple[tuple[int, int, int, int], str]]  # (bbox, text) per line

    @property
    def page_text(self) -> str:
        return " ".join(text for _, text in self.lines)


def load_page_samples(manifest: DatasetManifest, split: str | None = None) -> list[PageSample]:
    samples = []
    for item in manifest.items:
        if split and item.split != split:
            continue
        image, label = load_item(manifest, item)
        anns = [
            WordAnnotation(
                text=w["text"], bbox=tuple(w["bbox"]), line_index=w.get("line_index", 0)
            )
            for w in label["words"]
        ]
        samples.append(PageSample(image=image, lines=line_regions(anns)))
    return samples


def _batch_images(samples: list[PageSample], idxs: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.stack([samples[i].image for i in idxs]))[:, None]


def _line_crops(
    x_hat: torch.Tensor, samples: list[PageSample], idxs: np.ndarray, pad: int = 2
) -> tuple[list[torch.Tensor], list[str]]:
    """Differentiable ground-truth line crops from a batch of
    reconstructions, resized to the recognizer geometry."""
    crops, texts = [], []
    h, w = x_hat.shape[-2], x_hat.shape[-1]
    for row, i in enumerate(idxs):
        for (top, left, bh, bw), text in samples[i].lines:
            t0 = max(0, top - pad)
            l0 = max(0, left - pad)
            t1 = min(h, top + bh + pad)
            l1 = min(w, left + bw + pad)
            crop = x_hat[row : row + 1, :, t0:t1, l0:l1]
            crops.append(prepare_patch_tensor(crop))
            texts.append(text)
    return crops, texts


def _recognition_ce(
    recognizer: TextRecognizer, crops: list[torch.Tensor], texts: list[str]
) -> torch.Tensor:
    """Mean per-position CE over line crops, batched per width bucket."""
    by_width: dict[int, list[int]] = {}
    for k, crop in enumerate(crops):
        by_width.setdefault(crop.shape[-1], []).append(k)
    terms = []
    weights = []
    for width in sorted(by_width):
        ks = by_width[width]
        batch = torch.cat([crops[k] for k in ks], dim=0)
        logits = recognizer(batch)
        terms.append(ocr_loss_batch(logits, [texts[k] for k in ks], recognizer.vocab))
        weights.append(len(ks))
    total = sum(t * w for t, w in zip(terms, weights))
    return total / sum(weights)


# ---------------------------------------------------------------------------
# Trainers


@dataclass
class TrainLog:
    breakdowns: list[LossBreakdown] = field(default_factory=list)

    def to_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for step, b in enumerate(self.breakdowns):
                f.write(json.dumps({"step": step, **asdict(b)}) + "\n")


def _divergence_guard(breakdowns: list[LossBreakdown], window: int = 100) -> None:
    if len(breakdowns) <= window:
        return
    initial = abs(breakdowns[0].total) + 1e-9
    recent = breakdowns[-window:]
    if all(b.total > 10.0 * initial for b in recent):
        raise TrainingDiverged(
            len(breakdowns) - 1,
            f"total loss above 10x initial ({initial:.4g}) for {window} consecutive steps "
            f"(now {recent[-1].total:.4g})",
        )


def stage1_pretrain(
    codec: TextImageCodec,
    samples: list[PageSample],
    lambda_dist: float,
    steps: int,
    seed: int,
    batch_size: int = 8,
    lr: float = 1e-3,
) -> TrainLog:
    """Rate-distortion pretraining at the rate point set by ``lambda_dist``.

    Mutates ``codec`` in place; one checkpoint per rate point is the
    caller's concern. steps=0 leaves the weights untouched.
    """
    weights = TficLossWeights.stage1(lambda_dist)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(codec.parameters(), lr=lr)
    log = TrainLog()
    codec.train()
    for step in range(steps):
        idxs = rng.integers(0, len(samples), size=batch_size)
        x = _batch_images(samples, idxs)
        out = codec(x, mode="noise")
        try:
            loss, breakdown = total_loss(x, out["x_hat"], out["p_y"], out["p_z"], None, weights)
        except ValueError as exc:
            raise TrainingDiverged(step, str(exc)) from exc
        opt.zero_grad()
        loss.backward()
        opt.step()
        log.breakdowns.append(breakdown)
        _divergence_guard(log.breakdowns)
    codec.eval()
    return log


def stage2_finetune(
    codec: TextImageCodec,
    recognizer: TextRecognizer,
    samples: list[PageSample],
    gamma: float = 0.1,
    steps: int = 500,
    seed: int = 0,
    batch_size: int = 8,
    lr: float = 1e-4,
) -> TrainLog:
    """Recognition-loss fine-tuning from a stage-1 checkpoint.

    The recognizer must be frozen; its weights are verified
    bit-identical before and after. All codec weights train. On the
    first step both the analysis and synthesis transforms must receive
    gradient, otherwise the recognition signal is not reaching the
    encoder and the run aborts.
    """
    if not is_frozen(recognizer):
        raise RuntimeError("recognizer is not frozen; refusing to start stage 2")
    recognizer_hash = state_hash(recognizer)
    weights = TficLossWeights(lambda_dist=0.0, gamma_ocr=gamma)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(codec.parameters(), lr=lr)
    log = TrainLog()
    codec.train()
    for step in range(steps):
        idxs = rng.integers(0, len(samples), size=batch_size)
        x = _batch_images(samples, idxs)
        out = codec(x, mode="noise")
        crops, texts = _line_crops(out["x_hat"], samples, idxs)
        ocr = _recognition_ce(recognizer, crops, texts) if crops else None
        try:
            loss, breakdown = total_loss(x, out["x_hat"], out["p_y"], out["p_z"], ocr, weights)
        except ValueError as exc:
            raise TrainingDiverged(step, str(exc)) from exc
        opt.zero_grad()
        loss.backward()
        if step == 0:
            enc_grad = sum(float(p.grad.abs().sum()) for p in codec.g_a.parameters())
            dec_grad = sum(float(p.grad.abs().sum()) for p in codec.g_s.parameters())
            if enc_grad == 0.0:
                raise TrainingDiverged(0, f"dead encoder gradient at first step")
            # the decoder only receives gradient through the recognition
            # term; with gamma = 0 (control runs) it legitimately gets none
            if gamma > 0 and dec_grad == 0.0:
                raise TrainingDiverged(0, f"dead decoder gradient at first step")
            rec_grads = [p.grad for p in recognizer.parameters() if p.grad is not None]
            if any(float(g.abs().sum()) != 0.0 for g in rec_grads):
                raise RuntimeError("frozen recognizer received gradient")
        opt.step()
        log.breakdowns.append(breakdown)
        _divergence_guard(log.breakdowns)
    codec.eval()
    if state_hash(recognizer) != recognizer_hash:
        raise RuntimeError("frozen recognizer weights changed during stage 2")
    return log


# ---------------------------------------------------------------------------
# Evaluation


def evaluate_codec(
    codec: TextImageCodec,
    recognizer: TextRecognizer,
    samples: list[PageSample],
    label: str = "",
    noise_rate_draws: int = 0,
) -> RatePoint:
    """Held-out rate point: bpp, page-level recognition accuracy, PSNR.

    Accuracy recognizes each ground-truth line crop of the clamped
    reconstruction and compares the joined page text. With
    ``noise_rate_draws`` > 0 the returned bpp additionally averages that
    many noise-quantized rate draws (surrogate-consistency checks).
    """
    codec.eval()
    bpps, psnrs, accs = [], [], []
    noise_bpps = []
    with torch.no_grad():
        for sample in samples:
            x = torch.from_numpy(sample.image)[None, None]
            out = codec(x, mode="round")
            num_pixels = x.shape[-2] * x.shape[-1]
            est = rate_from_probabilities(out["p_y"], out["p_z"], num_pixels)
            bpps.append(est.bpp)
            psnrs.append(psnr(sample.image, out["x_hat"][0, 0].numpy()))
            preds = []
            for (top, left, bh, bw), _ in sample.lines:
                crop = out["x_hat"][0, 0, top : top + bh, left : left + bw].numpy()
                preds.append(recognizer.recognize(crop).text)
            accs.append(ocr_accuracy(sample.page_text, " ".join(preds)))
            for _ in range(noise_rate_draws):
                nout = codec(x, mode="noise")
                noise_bpps.append(
                    rate_from_probabilities(nout["p_y"], nout["p_z"], num_pixels).bpp
                )
    finite_psnrs = [p for p in psnrs if math.isfinite(p)]
    point = RatePoint(
        bpp=float(np.mean(bpps)),
        ocr_accuracy=float(np.mean(accs)),
        psnr_db=float(np.mean(finite_psnrs)) if finite_psnrs else math.inf,
        label=label,
    )
    if noise_rate_draws:
        return point, float(np.mean(noise_bpps))
    return point
