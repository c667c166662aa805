"""Trainable, then freezable, text recognizer.

Convolutional feature extraction collapses the patch height, a
bidirectional recurrent layer models the character sequence, and a
per-step classifier emits logits. The default loss is teacher-forced
per-position cross-entropy against the target indexes padded with
EOS-then-PAD; a CTC flag is available for ablation. Logits stay
differentiable with respect to the input pixels so downstream trainers
can backpropagate recognition error through a frozen copy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

__all__ = [
    "CharVocabulary",
    "RecognizerConfig",
    "RecognizerOutput",
    "TextRecognizer",
    "VocabularyError",
    "prepare_patch",
    "prepare_patch_tensor",
    "ocr_loss",
    "ctc_loss",
    "train_recognizer",
    "freeze",
    "is_frozen",
]

BLANK_INDEX = 0
EOS_INDEX = 1
PAD_INDEX = 2
_NUM_RESERVED = 3
_RESERVED_HEADER = "#reserved blank eos pad"


class VocabularyError(ValueError):
    pass


@dataclass(frozen=True)
class CharVocabulary:
    """Ordered character set with reserved blank/EOS/pad indexes.

    Symbol i maps to index i + 3; indexes 0..2 are reserved and never
    collide with symbols.
    """

    symbols: str

    def __post_init__(self) -> None:
        if len(set(self.symbols)) != len(self.symbols):
            raise VocabularyError("duplicate symbols in vocabulary")

    @property
    def size(self) -> int:
        return len(self.symbols) + _NUM_RESERVED

    def index_of(self, ch: str) -> int:
        pos = self.symbols.find(ch)
        if pos < 0:
            raise VocabularyError(f"character {ch!r} not in vocabulary")
        return pos + _NUM_RESERVED

    def encode(self, text: str, t_steps: int) -> torch.Tensor:
        """Target indexes padded to ``t_steps`` with EOS-then-PAD."""
        if len(text) >= t_steps:
            raise VocabularyError(
                f"text of length {len(text)} exceeds max length {t_steps - 1}"
            )
        idx = [self.index_of(c) for c in text] + [EOS_INDEX]
        idx += [PAD_INDEX] * (t_steps - len(idx))
        return torch.tensor(idx, dtype=torch.long)

    def decode(self, indices) -> str:
        """Per-step indexes -> text: cut at the first EOS, drop reserved."""
        out = []
        for i in indices:
            i = int(i)
            if i == EOS_INDEX:
                break
            if i >= _NUM_RESERVED:
                out.append(self.symbols[i - _NUM_RESERVED])
        return "".join(out)

    def decode_ctc(self, indices) -> str:
        """CTC-style decode: collapse repeats, drop blanks."""
        out = []
        prev = -1
        for i in indices:
            i = int(i)
            if i != prev and i >= _NUM_RESERVED:
                out.append(self.symbols[i - _NUM_RESERVED])
            prev = i
        return "".join(out)

    def to_file(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(_RESERVED_HEADER + "\n")
            for ch in self.symbols:
                f.write(ch + "\n")

    @classmethod
    def from_file(cls, path: str | Path) -> "CharVocabulary":
        with open(path, encoding="utf-8") as f:
            lines = f.read().split("\n")
        if not lines or not lines[0].startswith("#reserved"):
            raise VocabularyError(f"missing reserved-token header in {path}")
        symbols = [ln for ln in lines[1:] if ln != ""]
        for s in symbols:
            if len(s) != 1:
                raise VocabularyError(f"multi-character symbol {s!r} in {path}")
        return cls(symbols="".join(symbols))


@dataclass(frozen=True)
class RecognizerConfig:
    """Recognizer geometry and capacity.

    ``downsample`` sets the width stride of the feature extractor:
    T_steps = input width / downsample. The default of 16 makes one
    step span roughly one glyph at the 32-px working height, which the
    position-indexed cross-entropy needs; 4 gives the classic dense
    column sequence (useful with the CTC flag).
    """

    input_height: int = 32
    width_buckets: tuple[int, ...] = (64, 128, 256)
    downsample: int = 16  # power of two, >= 4
    conv_width: int = 32
    hidden: int = 64

    def __post_init__(self) -> None:
        ds = self.downsample
        if ds < 4 or ds & (ds - 1):
            raise ValueError(f"downsample must be a power of two >= 4, got {ds}")


@dataclass
class RecognizerOutput:
    """Logits (T_steps, vocab_size), their argmax path and decoded text."""

    logits: torch.Tensor
    per_step_argmax: list[int]
    text: str


def prepare_patch(
    image: np.ndarray, cfg: RecognizerConfig = RecognizerConfig()
) -> np.ndarray:
    """Resize a grayscale patch to the recognizer input geometry.

    Height is fixed; width scales with aspect then pads (with the edge
    value) up to the nearest bucket.
    """
    image = np.asarray(image, dtype=np.float32)
    if image.size == 0 or image.ndim != 2:
        raise ValueError(f"patch must be non-empty 2-D, got shape {image.shape}")
    t = prepare_patch_tensor(torch.from_numpy(image)[None, None], cfg)
    return t[0, 0].numpy()


def prepare_patch_tensor(
    patch: torch.Tensor, cfg: RecognizerConfig = RecognizerConfig()
) -> torch.Tensor:
    """Differentiable counterpart of :func:`prepare_patch` for (B,1,H,W)."""
    if patch.shape[-1] == 0 or patch.shape[-2] == 0:
        raise ValueError(f"patch has zero area: {tuple(patch.shape)}")
    h, w = patch.shape[-2], patch.shape[-1]
    new_w = max(1, int(round(w * cfg.input_height / h)))
    bucket = next((b for b in cfg.width_buckets if b >= new_w), cfg.width_buckets[-1])
    new_w = min(new_w, cfg.width_buckets[-1])
    resized = F.interpolate(
        patch, size=(cfg.input_height, new_w), mode="bilinear", align_corners=False
    )
    if new_w < bucket:
        pad_value = resized[..., :, -1:].mean().detach()
        pad = pad_value.expand(*resized.shape[:-1], bucket - new_w)
        resized = torch.cat([resized, pad], dim=-1)
    return resized


class TextRecognizer(nn.Module):
    """CNN + BiGRU + per-step classifier over a fixed vocabulary."""

    def __init__(self, vocab: CharVocabulary, cfg: RecognizerConfig = RecognizerConfig()):
        super().__init__()
        self.vocab = vocab
        self.cfg = cfg
        w = cfg.conv_width
        layers = [
            nn.Conv2d(1, w, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(w, w * 2, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
        ]
        remaining = cfg.downsample // 4  # extra width-only strides
        while remaining > 1:
            layers += [
                nn.Conv2d(w * 2, w * 2, 3, stride=(1, 2), padding=1),
                nn.ReLU(inplace=True),
            ]
            remaining //= 2
        layers += [
            nn.Conv2d(w * 2, w * 2, 3, stride=1, padding=1),
            nn.ReLU(inplace=True),
        ]
        self.features = nn.Sequential(*layers)
        self.rnn = nn.GRU(
            input_size=w * 2 * (cfg.input_height // 4),
            hidden_size=cfg.hidden,
            bidirectional=True,
            batch_first=True,
        )
        self.head = nn.Linear(2 * cfg.hidden, vocab.size)

    def t_steps(self, input_width: int) -> int:
        return input_width // self.cfg.downsample

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, 1, H, W) prepared patches -> logits (B, T, vocab)."""
        f = self.features(x)  # (B, C, H/4, W/4)
        b, c, fh, fw = f.shape
        seq = f.permute(0, 3, 1, 2).reshape(b, fw, c * fh)
        out, _ = self.rnn(seq)
        return self.head(out)

    @torch.no_grad()
    def recognize(self, patch: np.ndarray) -> RecognizerOutput:
        """Run on one raw grayscale patch; resizing is handled here."""
        prepared = prepare_patch(patch, self.cfg)
        x = torch.from_numpy(prepared)[None, None]
        was_training = self.training
        self.eval()
        logits = self.forward(x)[0]
        if was_training:
            self.train()
        if not torch.isfinite(logits).all():
            raise RuntimeError("non-finite logits")
        path = logits.argmax(dim=-1).tolist()
        return RecognizerOutput(
            logits=logits, per_step_argmax=path, text=self.vocab.decode(path)
        )


def ocr_loss(logits: torch.Tensor, gt: str, vocab: CharVocabulary) -> torch.Tensor:
    """Teacher-forced cross-entropy between per-step logits and the
    ground-truth indexes (padded with EOS-then-PAD), averaged over steps.

    ``logits``: (T, vocab) or (B, T, vocab) with a list of targets.
    """
    if logits.dim() == 2:
        target = vocab.encode(gt, logits.shape[0]).to(logits.device)
        return F.cross_entropy(logits, target)
    raise ValueError(f"expected (T, vocab) logits, got {tuple(logits.shape)}")


def ocr_loss_batch(logits: torch.Tensor, texts: list[str], vocab: CharVocabulary) -> torch.Tensor:
    targets = torch.stack([vocab.encode(t, logits.shape[1]) for t in texts]).to(logits.device)
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1))


def ctc_loss(logits: torch.Tensor, texts: list[str], vocab: CharVocabulary) -> torch.Tensor:
    """Ablation alternative: CTC over the same logits."""
    log_probs = F.log_softmax(logits, dim=-1).permute(1, 0, 2)
    targets = torch.cat([torch.tensor([vocab.index_of(c) for c in t]) for t in texts])
    input_lengths = torch.full((logits.shape[0],), logits.shape[1], dtype=torch.long)
    target_lengths = torch.tensor([len(t) for t in texts], dtype=torch.long)
    return F.ctc_loss(log_probs, targets, input_lengths, target_lengths, blank=BLANK_INDEX)


def freeze(model: nn.Module) -> nn.Module:
    """Freeze in place: eval mode, no gradients. Downstream trainers must
    leave every parameter bit-identical. Stale gradient buffers from the
    model's own training are dropped so downstream freeze checks see
    only gradients produced after freezing."""
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
        p.grad = None
    return model


def is_frozen(model: nn.Module) -> bool:
    return not model.training and all(not p.requires_grad for p in model.parameters())


@dataclass
class TrainResult:
    model: TextRecognizer
    holdout_accuracy: float
    losses: list[float] = field(default_factory=list)


def train_recognizer(
    samples: list[tuple[np.ndarray, str]],
    vocab: CharVocabulary,
    epochs: int = 8,
    seed: int = 0,
    cfg: RecognizerConfig = RecognizerConfig(),
    lr: float = 2e-3,
    batch_size: int = 32,
    holdout_fraction: float = 0.1,
    loss_mode: str = "ce",
    pad_weight: float = 0.1,
) -> TrainResult:
    """Train on (patch, text) word samples, then freeze.

    Deterministic for a fixed seed. The held-out exact-match word
    accuracy is recorded on the trailing fraction of the shuffled data.
    """
    if loss_mode not in ("ce", "ctc"):
        raise ValueError(f"unknown loss_mode {loss_mode!r}")
    for _, text in samples:
        for ch in text:
            vocab.index_of(ch)  # raises on mismatch

    torch.manual_seed(seed)
    model = TextRecognizer(vocab, cfg)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    n_holdout = max(1, int(len(samples) * holdout_fraction))
    train_idx = order[:-n_holdout]
    holdout_idx = order[-n_holdout:]

    prepared = [prepare_patch(img, cfg) for img, _ in samples]
    widths = {p.shape[1] for p in prepared}
    by_width = {w: [i for i in train_idx if prepared[i].shape[1] == w] for w in widths}

    opt = torch.optim.Adam(model.parameters(), lr=lr)
    losses: list[float] = []
    model.train()
    for _ in range(epochs):
        batches = []
        for w, idxs in sorted(by_width.items()):
            shuffled = rng.permutation(idxs)
            batches.extend(
                shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)
            )
        for batch in rng.permutation(len(batches)):
            idxs = batches[batch]
            x = torch.from_numpy(np.stack([prepared[i] for i in idxs]))[:, None]
            texts = [samples[i][1] for i in idxs]
            logits = model(x)
            if loss_mode == "ce":
                # training objective downweights trailing PAD positions so
                # the character positions dominate; the evaluation-facing
                # ocr_loss stays plain per-position cross-entropy
                targets = torch.stack(
                    [vocab.encode(t, logits.shape[1]) for t in texts]
                ).reshape(-1)
                per_pos = F.cross_entropy(
                    logits.reshape(-1, logits.shape[-1]), targets, reduction="none"
                )
                weights = torch.where(targets == PAD_INDEX, pad_weight, 1.0)
                loss = (per_pos * weights).sum() / weights.sum()
            else:
                loss = ctc_loss(logits, texts, vocab)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))

    freeze(model)
    correct = 0
    for i in holdout_idx:
        pred = model.recognize(samples[i][0]).text
        correct += pred == samples[i][1]
    return TrainResult(model=model, holdout_accuracy=correct / len(holdout_idx), losses=losses)
