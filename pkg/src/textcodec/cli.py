"""Command-line orchestration: dataset synthesis, training stages,
evaluation sweeps and figure/table emission.

Every subcommand reads a plain-text key=value config, writes its
artifacts plus a run manifest under --out, and exits non-zero with an
actionable message when inputs are missing. Subcommands compose only
through file artifacts; there is no hidden state between runs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .codec import CodecConfig, TextImageCodec
from .config import ConfigError, Field, parse_config_file, resolve, write_run_manifest
from .jpegdeg import DegradeConfig, degrade, upscale
from .metrics import (
    TimingReport,
    format_timing_table,
    read_rate_csv,
    time_stages,
    write_rate_csv,
    write_rate_json,
)
from .recognizer import CharVocabulary, RecognizerConfig, TextRecognizer, freeze, train_recognizer
from .refine import MorphologicalWordDetector, RefinePipelineState, ocr_guided_train
from .report import plot_rate_accuracy, plot_rate_psnr
from .restore import DnCNN, DnCnnConfig, RestoreLossWeights, train_dncnn
from .synth import (
    DEFAULT_CHARSET,
    PageSpec,
    extract_patches,
    load_item,
    read_dataset,
    render_page,
    sample_patch_boxes,
    write_dataset,
)
from .tfic import evaluate_codec, load_page_samples, stage1_pretrain, stage2_finetune

__all__ = ["main"]


class CliError(RuntimeError):
    pass


def _require_path(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {p}")
    return p


def _load_config(args, schema: list[Field]) -> dict:
    raw = parse_config_file(args.config) if args.config else {}
    cfg = resolve(raw, schema, source=str(args.config or "defaults"))
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


# ---------------------------------------------------------------------------
# synth


_SYNTH_SCHEMA = [
    Field("pages", int, 200),
    Field("page_h", int, 64),
    Field("page_w", int, 256),
    Field("lines_per_page", int, 1),
    Field("words_min", int, 1),
    Field("words_max", int, 2),
    Field("word_len_min", int, 2),
    Field("word_len_max", int, 6),
    Field("charset", str, "abcde"),
    Field("fonts", str, "0,1,2"),
    Field("font_sizes", str, "20,24,28"),
    Field("background", int, 0),
    Field("split_ratio", float, 0.8),
    Field("patches_per_page", int, 0),  # > 0 emits a patch dataset
    Field("patch_h", int, 64),
    Field("patch_w", int, 256),
    Field("seed", int, 0),
]


def _random_pages(cfg: dict):
    rng = np.random.default_rng(cfg["seed"])
    fonts = [int(f) for f in cfg["fonts"].split(",")]
    sizes = [int(s) for s in cfg["font_sizes"].split(",")]
    charset = cfg["charset"]
    for ch in charset:
        if ch not in DEFAULT_CHARSET:
            raise CliError(f"charset character {ch!r} outside the supported set")
    for _ in range(cfg["pages"]):
        lines = []
        for _ in range(cfg["lines_per_page"]):
            n_words = int(rng.integers(cfg["words_min"], cfg["words_max"] + 1))
            words = [
                "".join(rng.choice(list(charset), size=int(rng.integers(cfg["word_len_min"], cfg["word_len_max"] + 1))))
                for _ in range(n_words)
            ]
            lines.append(" ".join(words))
        spec = PageSpec(
            text_lines=tuple(lines),
            canvas_h_px=cfg["page_h"],
            canvas_w_px=cfg["page_w"],
            font_id=int(rng.choice(fonts)),
            font_size_px=int(rng.choice(sizes)),
            background_id=cfg["background"],
            seed=int(rng.integers(0, 2**63)),
        )
        yield spec, render_page(spec, charset=charset)


def cmd_synth(args) -> int:
    cfg = _load_config(args, _SYNTH_SCHEMA)
    items = []
    n_patches = 0
    for spec, (image, anns) in _random_pages(cfg):
        if cfg["patches_per_page"] > 0:
            boxes = sample_patch_boxes(
                image.shape[0], image.shape[1], cfg["patches_per_page"],
                cfg["patch_h"], cfg["patch_w"], seed=spec.seed,
            )
            for top, left in boxes:
                patch = image[top : top + cfg["patch_h"], left : left + cfg["patch_w"]]
                inside = []
                for a in anns:
                    t, l, h, w = a.bbox
                    if t >= top and l >= left and t + h <= top + cfg["patch_h"] and l + w <= left + cfg["patch_w"]:
                        moved = type(a)(text=a.text, bbox=(t - top, l - left, h, w), line_index=a.line_index)
                        inside.append(moved)
                text_lines = tuple(" ".join(a.text for a in inside) for _ in range(1)) if inside else ("",)
                items.append((patch, text_lines, inside))
                n_patches += 1
        else:
            items.append((image, spec.text_lines, anns))
    manifest = write_dataset(args.out, items, split_ratio=cfg["split_ratio"], seed=cfg["seed"])
    n_train = sum(1 for it in manifest.items if it.split == "train")
    write_run_manifest(args.out, "synth", cfg)
    print(f"wrote {len(manifest.items)} items ({n_train} train / {len(manifest.items) - n_train} test) to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train-ocr


_TRAIN_OCR_SCHEMA = [
    Field("dataset", str, required=True),
    Field("epochs", int, 8),
    Field("lr", float, 2e-3),
    Field("batch", int, 32),
    Field("downsample", int, 16),
    Field("loss_mode", str, "ce"),
    Field("seed", int, 0),
]


def _word_samples_from_dataset(manifest, split="train", pad=3):
    samples = []
    for item in manifest.items:
        if split and item.split != split:
            continue
        image, label = load_item(manifest, item)
        for w in label["words"]:
            t, l, h, wd = w["bbox"]
            crop = image[max(0, t - pad) : t + h + pad, max(0, l - pad) : l + wd + pad]
            if crop.size:
                samples.append((crop, w["text"]))
    return samples


def cmd_train_ocr(args) -> int:
    cfg = _load_config(args, _TRAIN_OCR_SCHEMA)
    manifest = read_dataset(_require_path(cfg["dataset"], "dataset"))
    samples = _word_samples_from_dataset(manifest)
    if not samples:
        raise CliError(f"dataset {cfg['dataset']} has no labeled words in the train split")
    charset = "".join(sorted({c for _, text in samples for c in text}))
    vocab = CharVocabulary(charset)
    result = train_recognizer(
        samples,
        vocab,
        epochs=cfg["epochs"],
        seed=cfg["seed"],
        cfg=RecognizerConfig(downsample=cfg["downsample"]),
        lr=cfg["lr"],
        batch_size=cfg["batch"],
        loss_mode=cfg["loss_mode"],
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.to_file(out / "vocab.txt")
    save_checkpoint(
        out / "recognizer.tcw",
        result.model,
        config={"charset": charset, "downsample": cfg["downsample"]},
    )
    (out / "metrics.json").write_text(
        json.dumps({"holdout_accuracy": result.holdout_accuracy, "samples": len(samples)})
    )
    write_run_manifest(args.out, "train-ocr", cfg)
    print(f"recognizer holdout accuracy {result.holdout_accuracy:.3f} ({len(samples)} word samples)")
    return 0


def _load_recognizer(path: Path) -> TextRecognizer:
    state, config = load_checkpoint(_require_path(path, "recognizer checkpoint"))
    vocab = CharVocabulary(config["charset"])
    model = TextRecognizer(vocab, RecognizerConfig(downsample=config.get("downsample", 16)))
    model.load_state_dict(state)
    return freeze(model)


# ---------------------------------------------------------------------------
# train-codec (stage 1) / train-tfic (stage 2)


_TRAIN_CODEC_SCHEMA = [
    Field("dataset", str, required=True),
    Field("lambda", float, required=True),
    Field("steps", int, 1200),
    Field("lr", float, 1e-3),
    Field("batch", int, 8),
    Field("channels_y", int, 32),
    Field("channels_z", int, 16),
    Field("width", int, 32),
    Field("seed", int, 0),
]


def _codec_from_cfg(cfg: dict) -> TextImageCodec:
    return TextImageCodec(
        CodecConfig(
            channels_y=cfg["channels_y"], channels_z=cfg["channels_z"], backbone_width=cfg["width"]
        )
    )


def cmd_train_codec(args) -> int:
    cfg = _load_config(args, _TRAIN_CODEC_SCHEMA)
    manifest = read_dataset(_require_path(cfg["dataset"], "dataset"))
    samples = load_page_samples(manifest, split="train")
    torch.manual_seed(cfg["seed"])
    codec = _codec_from_cfg(cfg)
    log = stage1_pretrain(
        codec, samples, lambda_dist=cfg["lambda"], steps=cfg["steps"], seed=cfg["seed"],
        batch_size=cfg["batch"], lr=cfg["lr"],
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = f"codec_lambda{cfg['lambda']:g}.tcw"
    save_checkpoint(out / name, codec, config={k: cfg[k] for k in ("lambda", "channels_y", "channels_z", "width")})
    log.to_jsonl(out / "train_log.jsonl")
    write_run_manifest(args.out, "train-codec", cfg)
    print(f"stage-1 checkpoint {name}: final loss {log.breakdowns[-1].total:.4f}" if log.breakdowns else name)
    return 0


_TRAIN_TFIC_SCHEMA = [
    Field("dataset", str, required=True),
    Field("checkpoint", str, required=True),
    Field("recognizer", str, required=True),
    Field("gamma", float, 0.1),
    Field("steps", int, 800),
    Field("lr", float, 1e-4),
    Field("batch", int, 8),
    Field("seed", int, 0),
]


def cmd_train_tfic(args) -> int:
    cfg = _load_config(args, _TRAIN_TFIC_SCHEMA)
    manifest = read_dataset(_require_path(cfg["dataset"], "dataset"))
    samples = load_page_samples(manifest, split="train")
    state, ck_cfg = load_checkpoint(_require_path(cfg["checkpoint"], "stage-1 checkpoint"))
    codec = TextImageCodec(
        CodecConfig(
            channels_y=ck_cfg["channels_y"], channels_z=ck_cfg["channels_z"], backbone_width=ck_cfg["width"]
        )
    )
    codec.load_state_dict(state)
    recognizer = _load_recognizer(Path(cfg["recognizer"]))
    log = stage2_finetune(
        codec, recognizer, samples, gamma=cfg["gamma"], steps=cfg["steps"], seed=cfg["seed"],
        batch_size=cfg["batch"], lr=cfg["lr"],
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "codec_tfic.tcw", codec, config=ck_cfg)
    log.to_jsonl(out / "train_log.jsonl")
    write_run_manifest(args.out, "train-tfic", cfg)
    print(f"stage-2 checkpoint codec_tfic.tcw: final loss {log.breakdowns[-1].total:.4f}")
    return 0


# ---------------------------------------------------------------------------
# degrade


_DEGRADE_SCHEMA = [
    Field("dataset", str, required=True),
    Field("factor", int, 2),
    Field("quality", int, 1),
    Field("seed", int, 0),
]


def cmd_degrade(args) -> int:
    cfg = _load_config(args, _DEGRADE_SCHEMA)
    manifest = read_dataset(_require_path(cfg["dataset"], "dataset"))
    dcfg = DegradeConfig(downscale_factor=cfg["factor"], jpeg_quality=cfg["quality"])
    root = Path(cfg["dataset"])
    out_dir = root / "degraded"
    out_dir.mkdir(exist_ok=True)
    meta = {"factor": cfg["factor"], "quality": cfg["quality"], "items": {}}
    for item in manifest.items:
        image, _ = load_item(manifest, item)
        degraded, nbytes = degrade(image, dcfg)
        stem = Path(item.image).stem
        from PIL import Image as PILImage

        PILImage.fromarray((np.clip(degraded, 0, 1) * 255).astype(np.uint8), mode="L").save(
            out_dir / f"{stem}.jpg", quality=95
        )
        meta["items"][stem] = {"bytes": nbytes}
    (root / "degraded_meta.json").write_text(json.dumps(meta, indent=2))
    write_run_manifest(args.out, "degrade", cfg)
    print(f"degraded {len(manifest.items)} images into {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# train-dncnn / train-refine


_TRAIN_DNCNN_SCHEMA = [
    Field("dataset", str, required=True),
    Field("depth", int, 7),
    Field("width", int, 32),
    Field("lambda_mix", float, 0.8),
    Field("tau", float, 0.5),
    Field("steps", int, 800),
    Field("lr", float, 1e-3),
    Field("batch", int, 16),
    Field("factor", int, 2),
    Field("quality", int, 1),
    Field("seed", int, 0),
]


def _degraded_pairs(manifest, factor: int, quality: int, split="train"):
    """(clean, degraded-upscaled) pairs, degrading on the fly."""
    dcfg = DegradeConfig(downscale_factor=factor, jpeg_quality=quality)
    pairs = []
    for item in manifest.items:
        if split and item.split != split:
            continue
        clean, _ = load_item(manifest, item)
        degraded, _ = degrade(clean, dcfg)
        pairs.append((clean, upscale(degraded, clean.shape)))
    return pairs


def cmd_train_dncnn(args) -> int:
    cfg = _load_config(args, _TRAIN_DNCNN_SCHEMA)
    manifest = read_dataset(_require_path(cfg["dataset"], "dataset"))
    pairs = _degraded_pairs(manifest, cfg["factor"], cfg["quality"])
    if not pairs:
        raise CliError("no training pairs; is the dataset split correctly?")
    result = train_dncnn(
        pairs,
        DnCnnConfig(depth=cfg["depth"], width=cfg["width"]),
        RestoreLossWeights(lambda_mix=cfg["lambda_mix"], tau=cfg["tau"]),
        steps=cfg["steps"], seed=cfg["seed"], batch_size=cfg["batch"], lr=cfg["lr"],
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "dncnn.tcw", result.model, config={"depth": cfg["depth"], "width": cfg["width"]})
    (out / "loss_log.json").write_text(json.dumps(result.losses))
    write_run_manifest(args.out, "train-dncnn", cfg)
    print(f"denoiser trained: final loss {result.losses[-1]:.5f}" if result.losses else "denoiser saved")
    return 0


_TRAIN_REFINE_SCHEMA = [
    Field("dataset", str, required=True),
    Field("d1", str, required=True),
    Field("recognizer", str, required=True),
    Field("depth", int, 7),
    Field("width", int, 32),
    Field("steps", int, 400),
    Field("lr", float, 1e-4),
    Field("factor", int, 2),
    Field("quality", int, 1),
    Field("seed", int, 0),
]


def _load_dncnn(path: Path) -> DnCNN:
    state, cfg = load_checkpoint(_require_path(path, "denoiser checkpoint"))
    model = DnCNN(DnCnnConfig(depth=cfg["depth"], width=cfg["width"]))
    model.load_state_dict(state)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def cmd_train_refine(args) -> int:
    cfg = _load_config(args, _TRAIN_REFINE_SCHEMA)
    manifest = read_dataset(_require_path(cfg["dataset"], "dataset"))
    d1 = _load_dncnn(Path(cfg["d1"]))
    recognizer = _load_recognizer(Path(cfg["recognizer"]))
    torch.manual_seed(cfg["seed"])
    d2 = DnCNN(DnCnnConfig(depth=cfg["depth"], width=cfg["width"]))
    state = RefinePipelineState(
        d1=d1, detector=MorphologicalWordDetector(), d2=d2, recognizer=recognizer,
        upscale_factor=cfg["factor"],
    )
    dcfg = DegradeConfig(downscale_factor=cfg["factor"], jpeg_quality=cfg["quality"])
    dataset = []
    for item in manifest.items:
        if item.split != "train":
            continue
        clean, label = load_item(manifest, item)
        degraded, _ = degrade(clean, dcfg)
        boxes = [(tuple(w["bbox"]), w["text"]) for w in label["words"]]
        if boxes:
            dataset.append((degraded, boxes))
    info = ocr_guided_train(state, dataset, steps=cfg["steps"], seed=cfg["seed"], lr=cfg["lr"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "d2.tcw", d2, config={"depth": cfg["depth"], "width": cfg["width"]})
    (out / "train_info.json").write_text(
        json.dumps({k: v for k, v in info.items() if k != "losses"})
    )
    write_run_manifest(args.out, "train-refine", cfg)
    print(f"refiner trained on {info['pages_used']} pages ({info['unmatched_detections']} unmatched detections)")
    return 0


# ---------------------------------------------------------------------------
# eval / plot


_EVAL_SCHEMA = [
    Field("dataset", str, required=True),
    Field("recognizer", str, required=True),
    Field("mode", str, "codec"),  # codec | restore
    Field("checkpoints", str, ""),  # codec mode: comma-separated paths
    Field("labels", str, ""),  # comma-separated, defaults to file stems
    Field("measure_time", bool, False),
    Field("repetitions", int, 3),
    Field("d1", str, ""),  # restore mode
    Field("d2", str, ""),
    Field("factor", int, 2),
    Field("quality", int, 1),
    Field("seed", int, 0),
]


def cmd_eval(args) -> int:
    cfg = _load_config(args, _EVAL_SCHEMA)
    if cfg["mode"] == "restore":
        return _eval_restore(args, cfg)
    if cfg["mode"] != "codec":
        raise CliError(f"unknown eval mode {cfg['mode']!r} (codec or restore)")
    if not cfg["checkpoints"]:
        raise CliError("codec eval needs checkpoints=...")
    manifest = read_dataset(_require_path(cfg["dataset"], "dataset"))
    samples = load_page_samples(manifest, split="test")
    if not samples:
        raise CliError("dataset has no test split")
    recognizer = _load_recognizer(Path(cfg["recognizer"]))
    paths = [Path(p.strip()) for p in cfg["checkpoints"].split(",") if p.strip()]
    labels = [l.strip() for l in cfg["labels"].split(",") if l.strip()] or [p.stem for p in paths]
    if len(labels) != len(paths):
        raise CliError(f"{len(paths)} checkpoints but {len(labels)} labels")
    points = []
    codecs = []
    for path, label in zip(paths, labels):
        state, ck_cfg = load_checkpoint(_require_path(path, "codec checkpoint"))
        codec = TextImageCodec(
            CodecConfig(
                channels_y=ck_cfg["channels_y"], channels_z=ck_cfg["channels_z"],
                backbone_width=ck_cfg["width"],
            )
        )
        codec.load_state_dict(state)
        codec.eval()
        codecs.append(codec)
        points.append(evaluate_codec(codec, recognizer, samples, label=label))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rate_csv(points, out / "ratepoints.csv")
    write_rate_json(points, out / "ratepoints.json")
    if cfg["measure_time"]:
        report = _measure_timing(codecs[0], recognizer, samples, cfg["repetitions"])
        (out / "timing.json").write_text(
            json.dumps(
                {
                    "encode_ms": report.encode_ms, "ocr_ms": report.ocr_ms,
                    "encode_over_ocr": report.encode_over_ocr,
                    "num_images": report.num_images, "repetitions": report.repetitions,
                }
            )
        )
    write_run_manifest(args.out, "eval", cfg)
    print(f"wrote {len(points)} rate points to {out / 'ratepoints.csv'}")
    return 0


def _eval_restore(args, cfg: dict) -> int:
    """Restoration-chain evaluation: per-page pipeline reports plus
    restored images as lossless files."""
    from PIL import Image as PILImage

    from .refine import RefinePipelineState, full_pipeline

    manifest = read_dataset(_require_path(cfg["dataset"], "dataset"))
    if not cfg["d1"] or not cfg["d2"]:
        raise CliError("restore eval needs d1=... and d2=... checkpoints")
    state = RefinePipelineState(
        d1=_load_dncnn(Path(cfg["d1"])),
        detector=MorphologicalWordDetector(),
        d2=_load_dncnn(Path(cfg["d2"])),
        recognizer=_load_recognizer(Path(cfg["recognizer"])),
        upscale_factor=cfg["factor"],
    )
    dcfg = DegradeConfig(downscale_factor=cfg["factor"], jpeg_quality=cfg["quality"])
    out = Path(args.out)
    (out / "restored").mkdir(parents=True, exist_ok=True)
    reports = []
    accs = []
    for item in manifest.items:
        if item.split != "test":
            continue
        clean, label = load_item(manifest, item)
        degraded, _ = degrade(clean, dcfg)
        gt_words = [(tuple(w["bbox"]), w["text"]) for w in label["words"]]
        result = full_pipeline(degraded, state, gt_words=gt_words)
        stem = Path(item.image).stem
        PILImage.fromarray(
            (np.clip(result.restored, 0, 1) * 255).astype(np.uint8), mode="L"
        ).save(out / "restored" / f"{stem}.png")
        reports.append({"item": stem, **result.report()})
        if result.page_accuracy is not None:
            accs.append(result.page_accuracy)
    (out / "pipeline_report.json").write_text(json.dumps(reports, indent=2))
    write_run_manifest(args.out, "eval", cfg)
    mean_acc = float(np.mean(accs)) if accs else float("nan")
    print(f"restored {len(reports)} pages, mean page accuracy {mean_acc:.3f}")
    return 0


def _measure_timing(codec, recognizer, samples, repetitions) -> TimingReport:
    from .codec import quantize, rate_from_probabilities

    def encode_fn(sample):
        with torch.no_grad():
            x = torch.from_numpy(sample.image)[None, None]
            out = codec(x, mode="round")
            rate_from_probabilities(out["p_y"], out["p_z"], x.shape[-1] * x.shape[-2])

    def ocr_fn(sample):
        recognizer.recognize(sample.image)

    subset = samples[: min(16, len(samples))]
    return time_stages(encode_fn, ocr_fn, subset, repetitions=repetitions)


_PLOT_SCHEMA = [
    Field("csv", str, required=True),
    Field("seed", int, 0),
]


def cmd_plot(args) -> int:
    cfg = _load_config(args, _PLOT_SCHEMA)
    csv_path = _require_path(cfg["csv"], "rate-point CSV")
    points = read_rate_csv(csv_path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plot_rate_accuracy(points, out / "rate_accuracy.png")
    plot_rate_psnr(points, out / "rate_psnr.png")
    timing_json = csv_path.parent / "timing.json"
    if timing_json.exists():
        data = json.loads(timing_json.read_text())
        report = TimingReport(
            encode_ms=tuple(data["encode_ms"]), ocr_ms=tuple(data["ocr_ms"]),
            encode_over_ocr=data["encode_over_ocr"], num_images=data["num_images"],
            repetitions=data["repetitions"],
        )
        (out / "timing_table.txt").write_text(format_timing_table(report) + "\n")
    write_run_manifest(args.out, "plot", cfg)
    print(f"wrote figures to {out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textcodec",
        description="Text-preserving compression and semantic text recovery workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "synth": (cmd_synth, "render a synthetic labeled dataset"),
        "train-ocr": (cmd_train_ocr, "train and freeze the text recognizer"),
        "train-codec": (cmd_train_codec, "stage-1 rate-distortion pretraining"),
        "train-tfic": (cmd_train_tfic, "stage-2 recognition-loss fine-tuning"),
        "degrade": (cmd_degrade, "write extreme-JPEG degraded copies of a dataset"),
        "train-dncnn": (cmd_train_dncnn, "train the residual restoration network"),
        "train-refine": (cmd_train_refine, "train the recognition-guided patch refiner"),
        "eval": (cmd_eval, "evaluate codec checkpoints into rate points"),
        "plot": (cmd_plot, "render rate curves and the timing table"),
    }
    for name, (fn, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.set_defaults(fn=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
