"""Recognition-guided refinement chain for restored document images.

Frozen first-stage restorer -> word detection -> trainable second-stage
patch refiner -> frozen recognizer supplying the training loss ->
patch reassembly. Only the second-stage refiner ever trains; every
other component is hash-checked frozen.

The desk-scale word detector binarizes (Otsu), closes horizontally and
takes connected components; it sits behind a small interface so a
heavier learned detector can be dropped in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import cv2
import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import state_hash
from .jpegdeg import upscale
from .metrics import ocr_accuracy
from .recognizer import TextRecognizer, is_frozen, ocr_loss_batch, prepare_patch_tensor
from .restore import DnCNN, restore_tensor

__all__ = [
    "WordRegion",
    "WordDetector",
    "MorphologicalWordDetector",
    "RefinePipelineState",
    "PipelineResult",
    "detect_words",
    "extract_and_refine",
    "ocr_guided_train",
    "assemble",
    "full_pipeline",
    "match_regions_to_labels",
    "region_iou",
]

WORKING_PATCH = (64, 256)


@dataclass(frozen=True)
class WordRegion:
    """Detected or ground-truth word box: (top, left, height, width)."""

    bbox: tuple[int, int, int, int]
    source: str = "detector"  # "detector" | "ground_truth"

    def __post_init__(self) -> None:
        t, l, h, w = self.bbox
        if h <= 0 or w <= 0:
            raise ValueError(f"region must have positive area, got {self.bbox}")


class WordDetector(Protocol):
    def __call__(self, image: np.ndarray) -> list["WordRegion"]: ...


class MorphologicalWordDetector:
    """Classical detector for dark text on a light background.

    Otsu binarization, horizontal closing sized from the median
    component height (merges letters, keeps word gaps), then connected
    components filtered by area.
    """

    def __init__(self, min_area: int = 24, min_height: int = 4, closing_scale: float = 0.6):
        self.min_area = min_area
        self.min_height = min_height
        self.closing_scale = closing_scale

    def __call__(self, image: np.ndarray) -> list[WordRegion]:
        u8 = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255), 0, 255).astype(np.uint8)
        # all-flat image has no text
        if int(u8.max()) - int(u8.min()) < 16:
            return []
        _, ink = cv2.threshold(u8, 0, 255, cv2.THRESH_BINARY_INV + cv2.THRESH_OTSU)
        n, _, stats, _ = cv2.connectedComponentsWithStats(ink, connectivity=8)
        heights = [stats[i, cv2.CC_STAT_HEIGHT] for i in range(1, n) if stats[i, cv2.CC_STAT_AREA] >= 4]
        if not heights:
            return []
        close_w = max(3, int(round(float(np.median(heights)) * self.closing_scale)))
        kernel = cv2.getStructuringElement(cv2.MORPH_RECT, (close_w, 1))
        merged = cv2.morphologyEx(ink, cv2.MORPH_CLOSE, kernel)
        n, _, stats, _ = cv2.connectedComponentsWithStats(merged, connectivity=8)
        regions = []
        for i in range(1, n):
            left, top = int(stats[i, cv2.CC_STAT_LEFT]), int(stats[i, cv2.CC_STAT_TOP])
            w, h = int(stats[i, cv2.CC_STAT_WIDTH]), int(stats[i, cv2.CC_STAT_HEIGHT])
            if stats[i, cv2.CC_STAT_AREA] < self.min_area or h < self.min_height:
                continue
            regions.append(WordRegion(bbox=(top, left, h, w), source="detector"))
        regions.sort(key=lambda r: (r.bbox[0] // 16, r.bbox[1]))
        return regions


def detect_words(image: np.ndarray, detector: WordDetector | None = None) -> list[WordRegion]:
    """Locate word regions in reading order; empty list on a blank image."""
    return (detector or MorphologicalWordDetector())(image)


def region_iou(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> float:
    at, al, ah, aw = a
    bt, bl, bh, bw = b
    inter_h = max(0, min(at + ah, bt + bh) - max(at, bt))
    inter_w = max(0, min(al + aw, bl + bw) - max(al, bl))
    inter = inter_h * inter_w
    union = ah * aw + bh * bw - inter
    return inter / union if union else 0.0


def match_regions_to_labels(
    regions: list[WordRegion],
    labels: list[tuple[tuple[int, int, int, int], str]],
    iou_threshold: float = 0.5,
) -> tuple[list[tuple[int, str]], int]:
    """Greedy one-to-one IoU matching of detections to labeled boxes.

    Returns ([(region_index, text), ...], n_unmatched_detections);
    unmatched detections are excluded from training and counted.
    """
    candidates = []
    for ri, region in enumerate(regions):
        for li, (bbox, _) in enumerate(labels):
            iou = region_iou(region.bbox, bbox)
            if iou >= iou_threshold:
                candidates.append((iou, ri, li))
    candidates.sort(reverse=True)
    used_r: set[int] = set()
    used_l: set[int] = set()
    matched = []
    for iou, ri, li in candidates:
        if ri in used_r or li in used_l:
            continue
        used_r.add(ri)
        used_l.add(li)
        matched.append((ri, labels[li][1]))
    matched.sort()
    return matched, len(regions) - len(used_r)


def _crop_resize_tensor(
    image_t: torch.Tensor, bbox: tuple[int, int, int, int], out_hw: tuple[int, int]
) -> torch.Tensor:
    t, l, h, w = bbox
    crop = image_t[..., t : t + h, l : l + w]
    if crop.shape[-1] == 0 or crop.shape[-2] == 0:
        raise ValueError(f"region {bbox} degenerate after cropping")
    return F.interpolate(crop, size=out_hw, mode="bilinear", align_corners=False)


def extract_and_refine(
    d2: DnCNN,
    image: np.ndarray,
    regions: list[WordRegion],
    patch_hw: tuple[int, int] = WORKING_PATCH,
) -> list[np.ndarray]:
    """Crop every region, resize to the working size, run the refiner.

    Output patches have exactly the refiner input dimensions.
    """
    if not regions:
        return []
    image_t = torch.from_numpy(np.asarray(image, dtype=np.float32))[None, None]
    crops = torch.cat([_crop_resize_tensor(image_t, r.bbox, patch_hw) for r in regions])
    d2.eval()
    with torch.no_grad():
        refined = restore_tensor(d2, crops, clamp=True)
    return [refined[i, 0].numpy() for i in range(refined.shape[0])]


def assemble(
    image: np.ndarray, regions: list[WordRegion], patches: list[np.ndarray]
) -> np.ndarray:
    """Write refined patches back into their boxes.

    Patches are resized back to each region's dimensions (pasted as-is
    when they already match). Pixels outside every region are left
    untouched; overlapping regions average.
    """
    if len(regions) != len(patches):
        raise ValueError(f"{len(regions)} regions but {len(patches)} patches")
    out = np.asarray(image, dtype=np.float32).copy()
    accum = np.zeros_like(out)
    count = np.zeros_like(out)
    for region, patch in zip(regions, patches):
        t, l, h, w = region.bbox
        if patch.shape != (h, w):
            patch = (
                F.interpolate(
                    torch.from_numpy(np.asarray(patch, dtype=np.float32))[None, None],
                    size=(h, w),
                    mode="bilinear",
                    align_corners=False,
                )[0, 0]
                .numpy()
            )
        accum[t : t + h, l : l + w] += patch
        count[t : t + h, l : l + w] += 1.0
    covered = count > 0
    out[covered] = accum[covered] / count[covered]
    return out


@dataclass
class RefinePipelineState:
    """Pipeline components; exactly one (d2) is trainable."""

    d1: DnCNN
    detector: WordDetector
    d2: DnCNN
    recognizer: TextRecognizer
    upscale_factor: int = 1  # degraded input is upscaled by this before d1

    def check_frozen(self) -> None:
        if any(p.requires_grad for p in self.d1.parameters()) or self.d1.training:
            raise RuntimeError("d1 must be frozen")
        if not is_frozen(self.recognizer):
            raise RuntimeError("recognizer must be frozen")

    def frozen_hashes(self) -> tuple[str, str]:
        return state_hash(self.d1), state_hash(self.recognizer)


@dataclass
class PipelineResult:
    restored: np.ndarray
    page_text: str
    per_word: list[dict]
    page_accuracy: float | None
    detections: int = 0
    matched: int = 0

    def report(self) -> dict:
        return {
            "detections": self.detections,
            "matched": self.matched,
            "per_word": self.per_word,
            "page_text": self.page_text,
            "page_acc": self.page_accuracy,
        }


def _restore_page(state: RefinePipelineState, degraded: np.ndarray) -> np.ndarray:
    x = degraded
    if state.upscale_factor > 1:
        h, w = degraded.shape
        x = upscale(degraded, (h * state.upscale_factor, w * state.upscale_factor))
    t = torch.from_numpy(np.asarray(x, dtype=np.float32))[None, None]
    with torch.no_grad():
        return restore_tensor(state.d1, t, clamp=True)[0, 0].numpy()


def ocr_guided_train(
    state: RefinePipelineState,
    dataset: list[tuple[np.ndarray, list[tuple[tuple[int, int, int, int], str]]]],
    steps: int = 400,
    seed: int = 0,
    batch_pages: int = 4,
    lr: float = 1e-4,
    iou_threshold: float = 0.5,
) -> dict:
    """Train the second-stage refiner with recognition loss only.

    ``dataset`` pairs a degraded page with its ground-truth word boxes
    and texts (boxes in restored-image coordinates). Detections are
    matched to labels by IoU; unmatched detections are excluded and
    counted. Aborts if an entire pass produces zero matches.
    """
    state.check_frozen()
    hashes_before = state.frozen_hashes()
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)

    # one-time restore + detect + match per page (d1 and detector frozen)
    prepared = []
    total_unmatched = 0
    for degraded, labels in dataset:
        restored = _restore_page(state, degraded)
        regions = detect_words(restored, state.detector)
        matched, unmatched = match_regions_to_labels(regions, labels, iou_threshold)
        total_unmatched += unmatched
        if not matched:
            continue
        image_t = torch.from_numpy(restored)[None, None]
        crops = torch.cat(
            [_crop_resize_tensor(image_t, regions[ri].bbox, WORKING_PATCH) for ri, _ in matched]
        )
        prepared.append((crops, [text for _, text in matched]))
    if not prepared:
        raise RuntimeError(
            f"no detections matched ground truth across {len(dataset)} pages "
            f"({total_unmatched} unmatched detections); check the detector"
        )

    opt = torch.optim.Adam(state.d2.parameters(), lr=lr)
    losses = []
    state.d2.train()
    for step in range(steps):
        idxs = rng.integers(0, len(prepared), size=min(batch_pages, len(prepared)))
        crops = torch.cat([prepared[i][0] for i in idxs])
        texts = [t for i in idxs for t in prepared[i][1]]
        refined = restore_tensor(state.d2, crops, clamp=False)
        logits = state.recognizer(prepare_patch_tensor(refined, state.recognizer.cfg))
        loss = ocr_loss_batch(logits, texts, state.recognizer.vocab)
        opt.zero_grad()
        loss.backward()
        if step == 0:
            d2_grad = sum(float(p.grad.abs().sum()) for p in state.d2.parameters())
            if d2_grad == 0.0:
                raise RuntimeError("refiner received no gradient at first step")
        opt.step()
        losses.append(float(loss.detach()))
    state.d2.eval()

    if state.frozen_hashes() != hashes_before:
        raise RuntimeError("frozen components changed during refinement training")
    return {"losses": losses, "unmatched_detections": total_unmatched, "pages_used": len(prepared)}


def full_pipeline(
    degraded: np.ndarray,
    state: RefinePipelineState,
    gt_page_text: str | None = None,
    gt_words: list[tuple[tuple[int, int, int, int], str]] | None = None,
) -> PipelineResult:
    """Degraded page -> restore -> detect -> refine -> reassemble -> read.

    Reports per-word recognitions in reading order. With ``gt_words``
    each detection is matched to a label (IoU >= 0.5) for per-word
    accuracy; the page accuracy uses ``gt_page_text`` when given, else
    the joined matched labels.
    """
    restored_d1 = _restore_page(state, degraded)
    regions = detect_words(restored_d1, state.detector)
    refined = extract_and_refine(state.d2, restored_d1, regions)
    assembled = assemble(restored_d1, regions, refined)
    preds = [state.recognizer.recognize(patch).text for patch in refined]
    gt_by_region: dict[int, str] = {}
    if gt_words:
        matched, _ = match_regions_to_labels(regions, gt_words)
        gt_by_region = dict(matched)
    per_word = []
    for idx, (region, pred) in enumerate(zip(regions, preds)):
        entry = {"bbox": list(region.bbox), "pred": pred}
        if idx in gt_by_region:
            entry["gt"] = gt_by_region[idx]
            entry["acc"] = ocr_accuracy(gt_by_region[idx], pred)
        per_word.append(entry)
    page_text = " ".join(preds)
    if gt_page_text is None and gt_words:
        gt_page_text = " ".join(text for _, text in gt_words)
    accuracy = ocr_accuracy(gt_page_text, page_text) if gt_page_text is not None else None
    return PipelineResult(
        restored=assembled,
        page_text=page_text,
        per_word=per_word,
        page_accuracy=accuracy,
        detections=len(regions),
        matched=len(gt_by_region),
    )
