import json
import shutil

import pytest

from textcodec.cli import main
from textcodec.metrics import read_rate_csv
from textcodec.synth import read_dataset


def write_cfg(path, **kv):
    path.write_text("".join(f"{k} = {v}\n" for k, v in kv.items()))
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One tiny artifact chain shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    cfg = write_cfg(
        root / "synth.cfg",
        pages=12, page_h=64, page_w=128, charset="ab",
        words_min=1, words_max=1, word_len_min=2, word_len_max=4,
        font_sizes="20,24", split_ratio=0.75,
    )
    assert main(["synth", "--config", str(cfg), "--seed", "3", "--out", str(data)]) == 0

    ocr_out = root / "ocr"
    cfg = write_cfg(root / "ocr.cfg", dataset=str(data), epochs=1)
    assert main(["train-ocr", "--config", str(cfg), "--out", str(ocr_out)]) == 0

    codec_out = root / "codec"
    cfg = write_cfg(
        root / "codec.cfg",
        dataset=str(data), steps=2, channels_y=8, channels_z=4, width=8,
        **{"lambda": 100.0},
    )
    assert main(["train-codec", "--config", str(cfg), "--out", str(codec_out)]) == 0

    tfic_out = root / "tfic"
    cfg = write_cfg(
        root / "tfic.cfg",
        dataset=str(data), checkpoint=str(codec_out / "codec_lambda100.tcw"),
        recognizer=str(ocr_out / "recognizer.tcw"), steps=1,
    )
    assert main(["train-tfic", "--config", str(cfg), "--out", str(tfic_out)]) == 0
    return root


class TestSynth:
    def test_dataset_layout_and_split(self, workspace):
        manifest = read_dataset(workspace / "data")
        assert len(manifest.items) == 12
        assert sum(1 for it in manifest.items if it.split == "train") == 9
        assert (workspace / "data" / "manifest.json").exists()
        assert (workspace / "data" / "run_manifest.json").exists()

    def test_patch_mode_counts(self, tmp_path):
        cfg = write_cfg(
            tmp_path / "synth.cfg",
            pages=3, page_h=256, page_w=512, charset="ab",
            patches_per_page=4, patch_h=64, patch_w=128,
        )
        out = tmp_path / "patches"
        assert main(["synth", "--config", str(cfg), "--out", str(out)]) == 0
        manifest = read_dataset(out)
        assert len(manifest.items) == 12  # 3 pages x 4 patches

    def test_manifest_reproducibility_fields(self, workspace):
        payload = json.loads((workspace / "data" / "run_manifest.json").read_text())
        assert payload["subcommand"] == "synth"
        assert payload["config"]["seed"] == 3
        assert payload["package_version"]


class TestTrainCommands:
    def test_ocr_artifacts(self, workspace):
        assert (workspace / "ocr" / "recognizer.tcw").exists()
        assert (workspace / "ocr" / "vocab.txt").exists()
        metrics = json.loads((workspace / "ocr" / "metrics.json").read_text())
        assert "holdout_accuracy" in metrics

    def test_codec_artifacts(self, workspace):
        assert (workspace / "codec" / "codec_lambda100.tcw").exists()
        log = (workspace / "codec" / "train_log.jsonl").read_text().strip().split("\n")
        assert len(log) == 2

    def test_tfic_artifacts(self, workspace):
        assert (workspace / "tfic" / "codec_tfic.tcw").exists()


class TestDegradeDncnn:
    def test_degrade_writes_sidecars(self, workspace, tmp_path):
        data = tmp_path / "data"
        shutil.copytree(workspace / "data", data)
        cfg = write_cfg(tmp_path / "deg.cfg", dataset=str(data), factor=2, quality=1)
        assert main(["degrade", "--config", str(cfg), "--out", str(tmp_path / "degout")]) == 0
        meta = json.loads((data / "degraded_meta.json").read_text())
        assert meta["quality"] == 1
        assert len(meta["items"]) == 12
        assert (data / "degraded" / "000000.jpg").exists()

    def test_train_dncnn(self, workspace, tmp_path):
        cfg = write_cfg(
            tmp_path / "dncnn.cfg",
            dataset=str(workspace / "data"), depth=3, width=8, steps=2,
        )
        out = tmp_path / "dncnn"
        assert main(["train-dncnn", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "dncnn.tcw").exists()

    def test_train_refine(self, workspace, tmp_path):
        dncnn_cfg = write_cfg(
            tmp_path / "dncnn.cfg",
            dataset=str(workspace / "data"), depth=3, width=8, steps=2,
            factor=1, quality=60,
        )
        d1_out = tmp_path / "d1"
        assert main(["train-dncnn", "--config", str(dncnn_cfg), "--out", str(d1_out)]) == 0
        cfg = write_cfg(
            tmp_path / "refine.cfg",
            dataset=str(workspace / "data"), d1=str(d1_out / "dncnn.tcw"),
            recognizer=str(workspace / "ocr" / "recognizer.tcw"),
            depth=3, width=8, steps=1, factor=1, quality=60,
        )
        out = tmp_path / "refine"
        assert main(["train-refine", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "d2.tcw").exists()
        info = json.loads((out / "train_info.json").read_text())
        assert info["pages_used"] > 0


class TestEvalPlot:
    def test_six_checkpoints_six_rows(self, workspace, tmp_path):
        # three stage-1 and three stage-2 checkpoints -> six rate points
        ckpts = []
        for i in range(3):
            p = tmp_path / f"s1_{i}.tcw"
            shutil.copy(workspace / "codec" / "codec_lambda100.tcw", p)
            ckpts.append(str(p))
        for i in range(3):
            p = tmp_path / f"s2_{i}.tcw"
            shutil.copy(workspace / "tfic" / "codec_tfic.tcw", p)
            ckpts.append(str(p))
        cfg = write_cfg(
            tmp_path / "eval.cfg",
            dataset=str(workspace / "data"),
            recognizer=str(workspace / "ocr" / "recognizer.tcw"),
            checkpoints=",".join(ckpts),
            measure_time="true", repetitions=1,
        )
        out = tmp_path / "eval"
        assert main(["eval", "--config", str(cfg), "--out", str(out)]) == 0
        points = read_rate_csv(out / "ratepoints.csv")
        assert len(points) == 6
        assert (out / "ratepoints.json").exists()
        assert (out / "timing.json").exists()

        plot_cfg = write_cfg(tmp_path / "plot.cfg", csv=str(out / "ratepoints.csv"))
        plot_out = tmp_path / "plots"
        assert main(["plot", "--config", str(plot_cfg), "--out", str(plot_out)]) == 0
        assert (plot_out / "rate_accuracy.png").stat().st_size > 0
        assert (plot_out / "rate_psnr.png").stat().st_size > 0
        table = (plot_out / "timing_table.txt").read_text()
        assert "measured" in table and "reference" in table


class TestErrorPaths:
    def test_missing_dataset_exits_nonzero(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "ocr.cfg", dataset=str(tmp_path / "nope"))
        code = main(["train-ocr", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "not found" in capsys.readouterr().err

    def test_unknown_config_key_exits_nonzero(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "synth.cfg", paiges=3)
        code = main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "unknown key" in capsys.readouterr().err

    def test_missing_required_key(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "codec.cfg", dataset=str(tmp_path))
        code = main(["train-codec", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 2
        err = capsys.readouterr().err
        assert "lambda" in err
