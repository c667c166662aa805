import math

import numpy as np
import pytest
import torch

from textcodec.checkpoint import state_hash
from textcodec.codec import CodecConfig, TextImageCodec
from textcodec.recognizer import CharVocabulary, RecognizerConfig, TextRecognizer, freeze
from textcodec.tfic import (
    LN2,
    LossBreakdown,
    PageSample,
    TficLossWeights,
    TrainingDiverged,
    evaluate_codec,
    stage1_pretrain,
    stage2_finetune,
    total_loss,
)

TINY_CFG = CodecConfig(channels_y=8, channels_z=4, backbone_width=8)


def tiny_pages(n=6, seed=0, h=64, w=128):
    rng = np.random.default_rng(seed)
    pages = []
    for _ in range(n):
        image = np.ones((h, w), dtype=np.float32)
        image[20:40, 10:60] = rng.random((20, 50)) * 0.3
        pages.append(PageSample(image=image, lines=[((18, 8, 24, 56), "ab")]))
    return pages


class TestLossWeights:
    def test_stage_factories(self):
        s1 = TficLossWeights.stage1(250.0)
        assert s1.gamma_ocr == 0.0
        s2 = TficLossWeights.stage2()
        assert s2.lambda_dist == 0.0
        assert s2.gamma_ocr == 0.1

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            TficLossWeights(-1.0, 0.0)


class TestTotalLoss:
    def _parts(self, seed=0):
        g = torch.Generator().manual_seed(seed)
        x = torch.rand(2, 1, 64, 64, generator=g, dtype=torch.float64)
        x_hat = torch.rand(2, 1, 64, 64, generator=g, dtype=torch.float64)
        p_y = torch.rand(2, 8, 4, 4, generator=g, dtype=torch.float64) * 0.9 + 0.05
        p_z = torch.rand(2, 4, 1, 1, generator=g, dtype=torch.float64) * 0.9 + 0.05
        ocr = torch.rand((), generator=g, dtype=torch.float64) * 3
        return x, x_hat, p_y, p_z, ocr

    def test_component_sum_oracle(self):
        x, x_hat, p_y, p_z, ocr = self._parts()
        w = TficLossWeights(lambda_dist=1.0, gamma_ocr=0.1)
        total, breakdown = total_loss(x, x_hat, p_y, p_z, ocr, w)
        # independent recomputation
        mse = float(((x - x_hat) ** 2).mean())
        nats = float(-(p_y.log().sum() + p_z.log().sum())) / (2 * 64 * 64)
        want = 1.0 * mse + nats + 0.1 * float(ocr)
        assert float(total) == pytest.approx(want, abs=1e-9)
        assert breakdown.total == pytest.approx(want, abs=1e-9)

    def test_breakdown_recombines(self):
        x, x_hat, p_y, p_z, ocr = self._parts(1)
        w = TficLossWeights(lambda_dist=7.0, gamma_ocr=0.3)
        _, breakdown = total_loss(x, x_hat, p_y, p_z, ocr, w)
        assert breakdown.recombined(w) == pytest.approx(breakdown.total, abs=1e-9)
        assert breakdown.rate_bits * LN2 == pytest.approx(
            breakdown.total - 7.0 * breakdown.dist - 0.3 * breakdown.ocr, abs=1e-9
        )

    def test_perfect_reconstruction_leaves_rate_only(self):
        x, _, p_y, p_z, _ = self._parts(2)
        w = TficLossWeights(lambda_dist=1.0, gamma_ocr=0.1)
        total, breakdown = total_loss(x, x.clone(), p_y, p_z, torch.zeros(()), w)
        assert breakdown.dist == 0.0
        assert float(total) == pytest.approx(breakdown.rate_bits * LN2, abs=1e-6)

    def test_zero_weights_give_rate_exactly(self):
        x, x_hat, p_y, p_z, ocr = self._parts(3)
        total, breakdown = total_loss(x, x_hat, p_y, p_z, ocr, TficLossWeights(0.0, 0.0))
        assert float(total) == pytest.approx(breakdown.rate_bits * LN2, rel=1e-12)

    def test_nan_rejected(self):
        x, x_hat, p_y, p_z, ocr = self._parts(4)
        p_y[0, 0, 0, 0] = 0.0  # log -> -inf
        with pytest.raises(ValueError, match="non-finite"):
            total_loss(x, x_hat, p_y, p_z, ocr, TficLossWeights(1.0, 0.0))


class TestStage1:
    def test_zero_steps_unchanged(self):
        torch.manual_seed(0)
        codec = TextImageCodec(TINY_CFG)
        before = state_hash(codec)
        stage1_pretrain(codec, tiny_pages(), lambda_dist=100.0, steps=0, seed=0)
        assert state_hash(codec) == before

    def test_seeded_log_reproducible(self):
        logs = []
        for _ in range(2):
            torch.manual_seed(0)
            codec = TextImageCodec(TINY_CFG)
            log = stage1_pretrain(
                codec, tiny_pages(), lambda_dist=100.0, steps=8, seed=5, batch_size=2
            )
            logs.append([b.total for b in log.breakdowns])
        assert logs[0] == logs[1]

    def test_breakdowns_logged_per_step(self):
        torch.manual_seed(0)
        codec = TextImageCodec(TINY_CFG)
        log = stage1_pretrain(codec, tiny_pages(), lambda_dist=100.0, steps=5, seed=0, batch_size=2)
        assert len(log.breakdowns) == 5
        assert all(isinstance(b, LossBreakdown) for b in log.breakdowns)

    def test_log_jsonl(self, tmp_path):
        torch.manual_seed(0)
        codec = TextImageCodec(TINY_CFG)
        log = stage1_pretrain(codec, tiny_pages(), lambda_dist=100.0, steps=3, seed=0, batch_size=2)
        path = tmp_path / "log.jsonl"
        log.to_jsonl(path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 3
        assert '"step": 0' in lines[0]


class TestStage2:
    def _recognizer(self, frozen=True):
        torch.manual_seed(1)
        model = TextRecognizer(CharVocabulary("ab"), RecognizerConfig(conv_width=8, hidden=16))
        if frozen:
            freeze(model)
        return model

    def test_refuses_unfrozen_recognizer(self):
        torch.manual_seed(0)
        codec = TextImageCodec(TINY_CFG)
        with pytest.raises(RuntimeError, match="frozen"):
            stage2_finetune(codec, self._recognizer(frozen=False), tiny_pages(), steps=1, seed=0)

    def test_first_step_gradients_and_freeze_hash(self):
        torch.manual_seed(0)
        codec = TextImageCodec(TINY_CFG)
        recognizer = self._recognizer()
        hash_before = state_hash(recognizer)
        log = stage2_finetune(
            codec, recognizer, tiny_pages(), gamma=0.1, steps=3, seed=0, batch_size=2
        )
        # completing without TrainingDiverged means encoder/decoder grads
        # were non-zero at the first step
        assert len(log.breakdowns) == 3
        assert state_hash(recognizer) == hash_before
        assert all(p.grad is None or float(p.grad.abs().sum()) == 0 for p in recognizer.parameters())

    def test_ocr_component_populated(self):
        torch.manual_seed(0)
        codec = TextImageCodec(TINY_CFG)
        log = stage2_finetune(codec, self._recognizer(), tiny_pages(), steps=2, seed=0, batch_size=2)
        assert all(b.ocr > 0 for b in log.breakdowns)


class TestEvaluate:
    def test_rate_point_fields(self):
        torch.manual_seed(0)
        codec = TextImageCodec(TINY_CFG).eval()
        recognizer = TextRecognizer(CharVocabulary("ab"), RecognizerConfig(conv_width=8, hidden=16))
        freeze(recognizer)
        point = evaluate_codec(codec, recognizer, tiny_pages(n=3), label="probe")
        assert point.bpp > 0
        assert 0.0 <= point.ocr_accuracy <= 1.0
        assert point.label == "probe"

    def test_noise_draws_returned(self):
        torch.manual_seed(0)
        codec = TextImageCodec(TINY_CFG).eval()
        recognizer = TextRecognizer(CharVocabulary("ab"), RecognizerConfig(conv_width=8, hidden=16))
        freeze(recognizer)
        point, noise_bpp = evaluate_codec(
            codec, recognizer, tiny_pages(n=2), noise_rate_draws=2
        )
        assert noise_bpp > 0
