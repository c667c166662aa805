"""Synthetic text-page generator with exact ground-truth word boxes.

Pages are rendered as dark text on a light uniform background using the
TTF fonts bundled with matplotlib, so rendering is deterministic and
self-contained. The same generator feeds both the codec training corpus
and the degraded-patch restoration corpus (white background mode).

Dataset layout on disk:
    <root>/images/NNNNNN.png
    <root>/labels/NNNNNN.json   {"text_lines": [...], "words": [{"text": ..., "bbox": [top,left,h,w]}]}
    <root>/manifest.json        {"seed": ..., "split_ratio": ..., "items": [...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
import numpy as np
from PIL import Image, ImageDraw, ImageFont

__all__ = [
    "PageSpec",
    "WordAnnotation",
    "ManifestItem",
    "DatasetManifest",
    "SynthError",
    "DatasetError",
    "DEFAULT_CHARSET",
    "FONT_CATALOG",
    "BACKGROUND_LEVELS",
    "render_page",
    "sample_patch_boxes",
    "extract_patches",
    "make_split",
    "write_dataset",
    "read_dataset",
    "load_item",
    "reading_order",
    "line_regions",
]


class SynthError(ValueError):
    pass


class DatasetError(ValueError):
    pass


DEFAULT_CHARSET = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"

_FONT_DIR = Path(matplotlib.get_data_path()) / "fonts" / "ttf"

# font_id indexes into this catalog
FONT_CATALOG = (
    "DejaVuSans.ttf",
    "DejaVuSerif.ttf",
    "DejaVuSansMono.ttf",
    "DejaVuSans-Bold.ttf",
    "DejaVuSerif-Bold.ttf",
)

# background_id -> uint8 background level; 0 is the uniform white
# required by the document-restoration corpus
BACKGROUND_LEVELS = (255, 250, 243, 235)

_INK_THRESHOLD = 250  # pixels strictly darker than this count as ink


@dataclass(frozen=True)
class PageSpec:
    """Recipe for one rendered page.

    Canvas dimensions must be positive multiples of 64 (codec
    downsampling constraint) and every character must belong to the
    configured charset.
    """

    text_lines: tuple[str, ...]
    canvas_h_px: int
    canvas_w_px: int
    font_id: int = 0
    font_size_px: int = 24
    background_id: int = 0
    seed: int = 0


@dataclass
class WordAnnotation:
    """Ground-truth word label with its exact ink bounding box.

    ``bbox`` is (top, left, height, width) in pixels and covers every
    ink pixel of the word.
    """

    text: str
    bbox: tuple[int, int, int, int]
    line_index: int = 0


@dataclass
class ManifestItem:
    image: str
    label: str
    split: str = ""


@dataclass
class DatasetManifest:
    items: list[ManifestItem]
    split_ratio: float = 0.8
    seed: int = 0
    root: Path | None = None


def _load_font(font_id: int, size_px: int) -> ImageFont.FreeTypeFont:
    if not 0 <= font_id < len(FONT_CATALOG):
        raise SynthError(f"unknown font_id {font_id}; catalog has {len(FONT_CATALOG)} fonts")
    return ImageFont.truetype(str(_FONT_DIR / FONT_CATALOG[font_id]), size_px)


def _validate_spec(spec: PageSpec, charset: str) -> None:
    for dim, name in ((spec.canvas_h_px, "canvas_h_px"), (spec.canvas_w_px, "canvas_w_px")):
        if dim <= 0 or dim % 64 != 0:
            raise SynthError(f"{name}={dim} is not a positive multiple of 64")
    if not 0 <= spec.background_id < len(BACKGROUND_LEVELS):
        raise SynthError(f"unknown background_id {spec.background_id}")
    if spec.font_size_px < 6:
        raise SynthError(f"font_size_px={spec.font_size_px} too small to render")
    allowed = set(charset)
    for li, line in enumerate(spec.text_lines):
        for ch in line:
            if ch != " " and ch not in allowed:
                raise SynthError(f"character {ch!r} (line {li}) outside vocabulary")


def _render_word(word: str, font: ImageFont.FreeTypeFont) -> np.ndarray:
    """Render one word on white and crop to its exact ink extent."""
    left, top, right, bottom = font.getbbox(word)
    pad = 4
    canvas = Image.new("L", (right - left + 2 * pad, bottom - top + 2 * pad), 255)
    ImageDraw.Draw(canvas).text((pad - left, pad - top), word, font=font, fill=0)
    arr = np.array(canvas)
    ink_rows = np.where((arr < _INK_THRESHOLD).any(axis=1))[0]
    ink_cols = np.where((arr < _INK_THRESHOLD).any(axis=0))[0]
    if len(ink_rows) == 0:
        raise SynthError(f"word {word!r} rendered no ink")
    return arr[ink_rows[0] : ink_rows[-1] + 1, ink_cols[0] : ink_cols[-1] + 1]


def render_page(
    spec: PageSpec, charset: str = DEFAULT_CHARSET
) -> tuple[np.ndarray, list[WordAnnotation]]:
    """Render a page and return (image in [0,1], word annotations).

    Deterministic for a fixed ``spec.seed``: layout jitter is drawn from
    a generator seeded with it. Words of one line sit on a common
    baseline band; lines are stacked top to bottom. Raises
    :class:`SynthError` when the text cannot fit the canvas.
    """
    _validate_spec(spec, charset)
    rng = np.random.default_rng(spec.seed)
    font = _load_font(spec.font_id, spec.font_size_px)
    bg = BACKGROUND_LEVELS[spec.background_id]
    page = np.full((spec.canvas_h_px, spec.canvas_w_px), bg, dtype=np.uint8)

    space_w = max(spec.font_size_px // 2, 4)
    line_pitch = int(spec.font_size_px * 1.6)
    margin = max(spec.font_size_px // 2, 6)
    annotations: list[WordAnnotation] = []

    y = margin + int(rng.integers(0, max(spec.font_size_px // 4, 1)))
    for li, line in enumerate(spec.text_lines):
        words = line.split()
        x = margin + int(rng.integers(0, space_w + 1))
        tallest = 0
        for word in words:
            glyph = _render_word(word, font)
            gh, gw = glyph.shape
            if y + gh > spec.canvas_h_px - 1:
                raise SynthError(f"line {li} ({line!r}) exceeds canvas height {spec.canvas_h_px}")
            if x + gw > spec.canvas_w_px - 1:
                raise SynthError(f"line {li} ({line!r}) exceeds canvas width {spec.canvas_w_px}")
            region = page[y : y + gh, x : x + gw]
            np.minimum(region, glyph, out=region)
            annotations.append(WordAnnotation(text=word, bbox=(y, x, gh, gw), line_index=li))
            x += gw + space_w + int(rng.integers(0, space_w // 2 + 1))
            tallest = max(tallest, gh)
        y += max(line_pitch, tallest + 4)

    return page.astype(np.float32) / 255.0, annotations


def reading_order(annotations: list[WordAnnotation]) -> list[WordAnnotation]:
    """Top-to-bottom then left-to-right by bbox top-left."""
    return sorted(annotations, key=lambda a: (a.bbox[0] // 16, a.bbox[1]))


def line_regions(
    annotations: list[WordAnnotation],
) -> list[tuple[tuple[int, int, int, int], str]]:
    """Group word annotations into per-line (bbox, text) regions.

    The bbox is the union of the line's word boxes; text joins the words
    left to right with single spaces.
    """
    by_line: dict[int, list[WordAnnotation]] = {}
    for ann in annotations:
        by_line.setdefault(ann.line_index, []).append(ann)
    regions = []
    for li in sorted(by_line):
        words = sorted(by_line[li], key=lambda a: a.bbox[1])
        tops = [a.bbox[0] for a in words]
        lefts = [a.bbox[1] for a in words]
        bottoms = [a.bbox[0] + a.bbox[2] for a in words]
        rights = [a.bbox[1] + a.bbox[3] for a in words]
        bbox = (min(tops), min(lefts), max(bottoms) - min(tops), max(rights) - min(lefts))
        regions.append((bbox, " ".join(a.text for a in words)))
    return regions


def sample_patch_boxes(
    page_h: int,
    page_w: int,
    count: int,
    patch_h: int,
    patch_w: int,
    seed: int,
    max_retries: int = 1000,
) -> list[tuple[int, int]]:
    """Sample ``count`` pairwise non-overlapping patch positions.

    Rejection sampling with a bounded retry budget; deterministic for a
    fixed seed. Returns (top, left) corners.
    """
    if patch_h > page_h or patch_w > page_w:
        raise SynthError(f"patch {patch_h}x{patch_w} larger than page {page_h}x{page_w}")
    rng = np.random.default_rng(seed)
    placed: list[tuple[int, int]] = []
    retries = 0
    while len(placed) < count:
        top = int(rng.integers(0, page_h - patch_h + 1))
        left = int(rng.integers(0, page_w - patch_w + 1))
        clash = any(
            top < t + patch_h and t < top + patch_h and left < l + patch_w and l < left + patch_w
            for t, l in placed
        )
        if clash:
            retries += 1
            if retries > max_retries:
                raise SynthError(
                    f"placed only {len(placed)}/{count} patches on a {page_h}x{page_w} "
                    f"page after {max_retries} retries"
                )
            continue
        placed.append((top, left))
    return placed


def extract_patches(
    page: np.ndarray,
    count: int,
    patch_h: int,
    patch_w: int,
    seed: int,
    max_retries: int = 1000,
) -> list[np.ndarray]:
    """Crop ``count`` non-overlapping patch_h x patch_w patches from ``page``."""
    h, w = page.shape[:2]
    boxes = sample_patch_boxes(h, w, count, patch_h, patch_w, seed, max_retries)
    return [page[t : t + patch_h, l : l + patch_w].copy() for t, l in boxes]


def make_split(manifest: DatasetManifest) -> DatasetManifest:
    """Assign disjoint, exhaustive train/test tags to the manifest items.

    With ratio r, |train| = round(r * N). Deterministic for a fixed
    manifest seed.
    """
    if not manifest.items:
        raise DatasetError("cannot split an empty manifest")
    if not 0.0 < manifest.split_ratio < 1.0:
        raise DatasetError(f"split_ratio must be in (0,1), got {manifest.split_ratio}")
    n = len(manifest.items)
    n_train = int(round(manifest.split_ratio * n))
    order = np.random.default_rng(manifest.seed).permutation(n)
    items = []
    for rank, idx in enumerate(order):
        src = manifest.items[idx]
        items.append(
            ManifestItem(image=src.image, label=src.label, split="train" if rank < n_train else "test")
        )
    items.sort(key=lambda it: it.image)
    return DatasetManifest(
        items=items, split_ratio=manifest.split_ratio, seed=manifest.seed, root=manifest.root
    )


# ---------------------------------------------------------------------------
# On-disk layout


def _label_payload(text_lines: tuple[str, ...], annotations: list[WordAnnotation]) -> dict:
    return {
        "text_lines": list(text_lines),
        "words": [
            {"text": a.text, "bbox": list(a.bbox), "line_index": a.line_index}
            for a in annotations
        ],
    }


def write_dataset(
    root: str | Path,
    pages: list[tuple[np.ndarray, tuple[str, ...], list[WordAnnotation]]],
    split_ratio: float = 0.8,
    seed: int = 0,
) -> DatasetManifest:
    """Write (image, text_lines, annotations) items as PNG + JSON sidecars
    and a split manifest. Images are stored as lossless 8-bit grayscale."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)

    items = []
    for i, (image, text_lines, annotations) in enumerate(pages):
        img_rel = f"images/{i:06d}.png"
        lab_rel = f"labels/{i:06d}.json"
        u8 = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(u8, mode="L").save(root / img_rel)
        with open(root / lab_rel, "w", encoding="utf-8") as f:
            json.dump(_label_payload(text_lines, annotations), f)
        items.append(ManifestItem(image=img_rel, label=lab_rel))

    manifest = make_split(DatasetManifest(items=items, split_ratio=split_ratio, seed=seed, root=root))
    with open(root / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(
            {
                "seed": seed,
                "split_ratio": split_ratio,
                "items": [
                    {"image": it.image, "label": it.label, "split": it.split}
                    for it in manifest.items
                ],
            },
            f,
            indent=2,
        )
    return manifest


def read_dataset(root: str | Path) -> DatasetManifest:
    """Load and validate a dataset manifest; every referenced file must
    exist and every label sidecar must carry complete word boxes."""
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"missing manifest: {manifest_path}")
    with open(manifest_path, encoding="utf-8") as f:
        raw = json.load(f)
    items = []
    for entry in raw["items"]:
        img = root / entry["image"]
        lab = root / entry["label"]
        if not img.exists():
            raise DatasetError(f"missing image file: {img}")
        if not lab.exists():
            raise DatasetError(f"missing label file: {lab}")
        with open(lab, encoding="utf-8") as lf:
            payload = json.load(lf)
        if "text_lines" not in payload or "words" not in payload:
            raise DatasetError(f"label missing required fields: {lab}")
        for word in payload["words"]:
            if "text" not in word or "bbox" not in word or len(word["bbox"]) != 4:
                raise DatasetError(f"malformed word annotation in {lab}")
        items.append(ManifestItem(image=entry["image"], label=entry["label"], split=entry["split"]))
    return DatasetManifest(
        items=items, split_ratio=raw["split_ratio"], seed=raw["seed"], root=root
    )


def load_item(manifest: DatasetManifest, item: ManifestItem) -> tuple[np.ndarray, dict]:
    """Load one item's image ([0,1] float) and its label payload."""
    if manifest.root is None:
        raise DatasetError("manifest has no root directory")
    image = np.array(Image.open(manifest.root / item.image).convert("L"), dtype=np.float32) / 255.0
    with open(manifest.root / item.label, encoding="utf-8") as f:
        label = json.load(f)
    return image, label
