"""Session-scoped toy corpus and trained models.

Training happens once per session and is shared between the module
trend tests and the acceptance suite. Everything is seeded and runs on
CPU; the full set of fixtures builds in a few minutes.
"""

import copy
from dataclasses import dataclass

import numpy as np
import pytest
import torch

from textcodec.checkpoint import state_hash
from textcodec.codec import CodecConfig, TextImageCodec
from textcodec.jpegdeg import DegradeConfig, degrade, upscale
from textcodec.recognizer import CharVocabulary, TrainResult, train_recognizer
from textcodec.refine import MorphologicalWordDetector, RefinePipelineState, ocr_guided_train
from textcodec.restore import DnCnnConfig, RestoreLossWeights, build_dncnn, train_dncnn
from textcodec.synth import PageSpec, WordAnnotation, line_regions, render_page
from textcodec.tfic import PageSample, evaluate_codec, stage1_pretrain, stage2_finetune

CHARSET = "abcde"
DESK_CODEC = CodecConfig(channels_y=32, channels_z=16, backbone_width=32)
DESK_DEGRADE = DegradeConfig(downscale_factor=2, jpeg_quality=1)
STAGE1_LAMBDA = 60.0


@dataclass
class PageRecord:
    image: np.ndarray
    annotations: list[WordAnnotation]

    @property
    def page_text(self) -> str:
        return " ".join(a.text for a in self.annotations)

    def as_sample(self) -> PageSample:
        return PageSample(image=self.image, lines=line_regions(self.annotations))


def _make_pages(n: int, seed: int) -> list[PageRecord]:
    # long words at large sizes keep the pages text-dominant, which the
    # stage-2 rate/recognition balance needs
    rng = np.random.default_rng(seed)
    records = []
    for _ in range(n):
        word = "".join(rng.choice(list(CHARSET), size=int(rng.integers(3, 9))))
        spec = PageSpec(
            text_lines=(word,),
            canvas_h_px=64,
            canvas_w_px=256,
            font_id=int(rng.choice([0, 1, 2])),
            font_size_px=int(rng.choice([26, 30, 34])),
            seed=int(rng.integers(0, 2**32)),
        )
        image, anns = render_page(spec, charset=CHARSET)
        records.append(PageRecord(image=image, annotations=anns))
    return records


def word_crops(records: list[PageRecord], pad: int = 3) -> list[tuple[np.ndarray, str]]:
    samples = []
    for rec in records:
        for a in rec.annotations:
            t, l, h, w = a.bbox
            crop = rec.image[max(0, t - pad) : t + h + pad, max(0, l - pad) : l + w + pad]
            samples.append((crop, a.text))
    return samples


@dataclass
class ToyCorpus:
    train: list[PageRecord]
    test: list[PageRecord]
    word_samples: list[tuple[np.ndarray, str]]

    @property
    def train_samples(self) -> list[PageSample]:
        return [r.as_sample() for r in self.train]

    @property
    def test_samples(self) -> list[PageSample]:
        return [r.as_sample() for r in self.test]


@pytest.fixture(scope="session")
def corpus() -> ToyCorpus:
    pages = _make_pages(600, seed=42)
    extra = _make_pages(1400, seed=43)  # recognizer-only word sources
    return ToyCorpus(
        train=pages[:480],
        test=pages[480:],
        word_samples=word_crops(pages[:480]) + word_crops(extra),
    )


@pytest.fixture(scope="session")
def frozen_recognizer(corpus) -> TrainResult:
    result = train_recognizer(
        corpus.word_samples, CharVocabulary(CHARSET), epochs=8, seed=0
    )
    # captured right after freezing; downstream fixtures must never move it
    result.initial_hash = state_hash(result.model)
    return result


@dataclass
class TrainedCodec:
    codec: TextImageCodec
    point: object  # RatePoint on the held-out pages


@pytest.fixture(scope="session")
def stage1(corpus, frozen_recognizer) -> TrainedCodec:
    torch.manual_seed(0)
    codec = TextImageCodec(DESK_CODEC)
    stage1_pretrain(
        codec, corpus.train_samples, lambda_dist=STAGE1_LAMBDA, steps=2000, seed=1, lr=2e-3
    )
    point = evaluate_codec(codec, frozen_recognizer.model, corpus.test_samples, label="stage1")
    return TrainedCodec(codec=codec, point=point)


@pytest.fixture(scope="session")
def stage2(corpus, frozen_recognizer, stage1) -> TrainedCodec:
    codec = TextImageCodec(DESK_CODEC)
    codec.load_state_dict(copy.deepcopy(stage1.codec.state_dict()))
    stage2_finetune(
        codec,
        frozen_recognizer.model,
        corpus.train_samples,
        gamma=0.1,
        steps=800,
        seed=2,
        lr=1e-4,
    )
    point = evaluate_codec(codec, frozen_recognizer.model, corpus.test_samples, label="stage2")
    return TrainedCodec(codec=codec, point=point)


def degrade_up(image: np.ndarray) -> np.ndarray:
    low, _ = degrade(image, DESK_DEGRADE)
    return upscale(low, image.shape)


@pytest.fixture(scope="session")
def dncnn_d1(corpus):
    pairs = [(r.image, degrade_up(r.image)) for r in corpus.train]
    result = train_dncnn(
        pairs, DnCnnConfig(depth=7, width=32), RestoreLossWeights(), steps=1000, seed=1
    )
    for p in result.model.parameters():
        p.requires_grad_(False)
    return result.model


@pytest.fixture(scope="session")
def refine_state(corpus, frozen_recognizer, dncnn_d1) -> RefinePipelineState:
    """D2 trained with recognition loss on the degraded training pages."""
    torch.manual_seed(3)
    d2 = build_dncnn(DnCnnConfig(depth=7, width=32))
    state = RefinePipelineState(
        d1=dncnn_d1,
        detector=MorphologicalWordDetector(),
        d2=d2,
        recognizer=frozen_recognizer.model,
        upscale_factor=DESK_DEGRADE.downscale_factor,
    )
    dataset = []
    for r in corpus.train:
        low, _ = degrade(r.image, DESK_DEGRADE)
        dataset.append((low, [(a.bbox, a.text) for a in r.annotations]))
    ocr_guided_train(state, dataset, steps=500, seed=4, lr=2e-4)
    return state
