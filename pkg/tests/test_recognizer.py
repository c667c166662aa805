import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from textcodec.recognizer import (
    EOS_INDEX,
    PAD_INDEX,
    CharVocabulary,
    RecognizerConfig,
    TextRecognizer,
    VocabularyError,
    ctc_loss,
    freeze,
    is_frozen,
    ocr_loss,
    prepare_patch,
    train_recognizer,
)


class TestVocabulary:
    def test_reserved_indexes_disjoint(self):
        vocab = CharVocabulary("abc")
        assert vocab.index_of("a") == 3
        assert vocab.size == 6

    def test_duplicates_rejected(self):
        with pytest.raises(VocabularyError):
            CharVocabulary("aba")

    def test_encode_eos_then_pad(self):
        vocab = CharVocabulary("ab")
        target = vocab.encode("ab", 6)
        assert target.tolist() == [3, 4, EOS_INDEX, PAD_INDEX, PAD_INDEX, PAD_INDEX]

    def test_encode_too_long_names_limit(self):
        vocab = CharVocabulary("ab")
        with pytest.raises(VocabularyError, match="max length 3"):
            vocab.encode("abab", 4)

    def test_decode_cuts_at_eos(self):
        vocab = CharVocabulary("ab")
        assert vocab.decode([3, 4, EOS_INDEX, 3, 3]) == "ab"

    def test_decode_pure_function(self):
        vocab = CharVocabulary("xyz")
        seq = [5, 4, 3, EOS_INDEX]
        assert vocab.decode(seq) == vocab.decode(seq) == "zyx"

    def test_unknown_char(self):
        with pytest.raises(VocabularyError, match="'Q'"):
            CharVocabulary("ab").index_of("Q")

    def test_file_roundtrip(self, tmp_path):
        vocab = CharVocabulary("abc123")
        path = tmp_path / "vocab.txt"
        vocab.to_file(path)
        back = CharVocabulary.from_file(path)
        assert back.symbols == vocab.symbols
        assert path.read_text().startswith("#reserved blank eos pad\n")

    def test_file_requires_header(self, tmp_path):
        path = tmp_path / "vocab.txt"
        path.write_text("a\nb\n")
        with pytest.raises(VocabularyError, match="header"):
            CharVocabulary.from_file(path)


class TestPreparePatch:
    def test_fixed_height_bucketed_width(self):
        out = prepare_patch(np.ones((64, 150)))
        assert out.shape == (32, 128)  # 150 * 32/64 = 75 -> bucket 128

    def test_small_patch_smallest_bucket(self):
        out = prepare_patch(np.ones((20, 30)))
        assert out.shape == (32, 64)

    def test_wide_patch_capped(self):
        out = prepare_patch(np.ones((32, 4000)))
        assert out.shape == (32, 256)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            prepare_patch(np.ones((0, 10)))


class TestRecognizerShapes:
    def test_t_steps_width_256_downsample_4(self):
        vocab = CharVocabulary("ab")
        cfg = RecognizerConfig(downsample=4, width_buckets=(256,))
        model = TextRecognizer(vocab, cfg)
        logits = model(torch.rand(1, 1, 32, 256))
        assert logits.shape == (1, 64, vocab.size)
        assert model.t_steps(256) == 64

    def test_t_steps_default_geometry(self):
        vocab = CharVocabulary("ab")
        model = TextRecognizer(vocab, RecognizerConfig())
        logits = model(torch.rand(2, 1, 32, 128))
        assert logits.shape == (2, 8, vocab.size)

    def test_recognize_finite_and_in_vocab(self):
        torch.manual_seed(0)
        vocab = CharVocabulary("abc")
        model = TextRecognizer(vocab, RecognizerConfig())
        out = model.recognize(np.random.default_rng(0).random((40, 100)).astype(np.float32))
        assert torch.isfinite(out.logits).all()
        assert set(out.text) <= set("abc")
        assert out.text == vocab.decode(out.per_step_argmax)

    def test_recognize_rejects_empty(self):
        vocab = CharVocabulary("ab")
        model = TextRecognizer(vocab, RecognizerConfig())
        with pytest.raises(ValueError):
            model.recognize(np.ones((0, 10), dtype=np.float32))

    def test_bad_downsample_rejected(self):
        with pytest.raises(ValueError):
            RecognizerConfig(downsample=6)


class TestOcrLoss:
    def test_near_delta_logits(self):
        vocab = CharVocabulary("abcd")
        t_steps = 8
        target = vocab.encode("bad", t_steps)
        logits = torch.full((t_steps, vocab.size), -100.0)
        logits[torch.arange(t_steps), target] = 100.0
        assert float(ocr_loss(logits, "bad", vocab)) < 1e-6

    def test_uniform_logits_log_vocab(self):
        # 26 letters + 10 digits + 2 reserved beyond blank = vocab size 38 with 35 symbols
        vocab = CharVocabulary("abcdefghijklmnopqrstuvwxyz012345678")
        assert vocab.size == 38
        logits = torch.zeros(10, vocab.size)
        loss = float(ocr_loss(logits, "abc", vocab))
        assert loss == pytest.approx(math.log(38), abs=1e-6)

    def test_against_independent_ce_oracle(self):
        torch.manual_seed(3)
        vocab = CharVocabulary("abcde")
        logits = torch.randn(12, vocab.size, dtype=torch.float64)
        gt = "dead"
        got = float(ocr_loss(logits, gt, vocab))
        # oracle: mean over positions of -log softmax at the target index
        target = vocab.encode(gt, 12)
        log_probs = logits - torch.logsumexp(logits, dim=-1, keepdim=True)
        want = float(-log_probs[torch.arange(12), target].mean())
        assert got == pytest.approx(want, abs=1e-9)

    def test_differentiable_wrt_logits(self):
        vocab = CharVocabulary("ab")
        logits = torch.randn(6, vocab.size, requires_grad=True)
        ocr_loss(logits, "ab", vocab).backward()
        assert logits.grad is not None
        assert float(logits.grad.abs().sum()) > 0

    def test_ctc_alternative_runs(self):
        torch.manual_seed(1)
        vocab = CharVocabulary("abc")
        logits = torch.randn(2, 16, vocab.size)
        loss = ctc_loss(logits, ["ab", "ca"], vocab)
        assert float(loss) > 0


class TestGradientPassThrough:
    def test_input_pixel_gradient_matches_finite_differences(self):
        torch.manual_seed(5)
        vocab = CharVocabulary("abcd")
        model = TextRecognizer(vocab, RecognizerConfig()).double()
        x0 = torch.rand(1, 1, 32, 128, dtype=torch.float64)
        x = x0.clone().requires_grad_(True)
        loss = ocr_loss(model(x)[0], "abc", vocab)
        loss.backward()
        assert float(x.grad.abs().max()) > 0
        # check at the strongest-gradient pixels, where relative error is
        # well conditioned
        flat = x.grad[0, 0].abs().flatten()
        pixels = [(int(k) // 128, int(k) % 128) for k in flat.topk(3).indices]
        eps = 1e-6
        for i, j in pixels:
            plus = x0.clone()
            plus[0, 0, i, j] += eps
            minus = x0.clone()
            minus[0, 0, i, j] -= eps
            with torch.no_grad():
                fd = (
                    float(ocr_loss(model(plus)[0], "abc", vocab))
                    - float(ocr_loss(model(minus)[0], "abc", vocab))
                ) / (2 * eps)
            grad = float(x.grad[0, 0, i, j])
            scale = max(abs(fd), abs(grad), 1e-9)
            assert abs(fd - grad) / scale < 1e-3


class TestTraining:
    def _samples(self, n=60):
        rng = np.random.default_rng(0)
        out = []
        for _ in range(n):
            img = rng.random((24, 48)).astype(np.float32)
            out.append((img, "".join(rng.choice(list("ab"), size=2))))
        return out

    def test_zero_epochs_chance_level(self):
        vocab = CharVocabulary("ab")
        res = train_recognizer(self._samples(), vocab, epochs=0, seed=0)
        assert res.holdout_accuracy <= 0.3
        assert is_frozen(res.model)

    def test_seed_reproducibility(self):
        vocab = CharVocabulary("ab")
        r1 = train_recognizer(self._samples(), vocab, epochs=1, seed=7)
        r2 = train_recognizer(self._samples(), vocab, epochs=1, seed=7)
        for p1, p2 in zip(r1.model.parameters(), r2.model.parameters()):
            assert torch.equal(p1, p2)
        assert r1.losses == r2.losses

    def test_vocabulary_mismatch_rejected(self):
        vocab = CharVocabulary("xy")
        with pytest.raises(VocabularyError):
            train_recognizer(self._samples(), vocab, epochs=0, seed=0)

    def test_freeze_contract(self):
        vocab = CharVocabulary("ab")
        model = TextRecognizer(vocab, RecognizerConfig())
        assert not is_frozen(model)
        freeze(model)
        assert is_frozen(model)
        assert all(not p.requires_grad for p in model.parameters())
