import configparser

import numpy as np
import pytest
from PIL import Image

from cracknet.cli import EXIT_CONFIG, EXIT_DATA, load_config, main
from cracknet.io import load_checkpoint, load_mask

SMALL = """
[synthetic]
n_train = 3
n_test = 2
height = 24
width = 24
channels = 1

[geometry]
h = 4
s = 3

[train]
iterations = 6
batch_size = 32
checkpoint_every = 4
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL)
    return str(path)


@pytest.fixture
def dataset(tmp_path, config):
    root = tmp_path / "data"
    assert main(["gen-synthetic", "--config", config, "--out", str(root)]) == 0
    return root


def run(*argv):
    return main([str(a) for a in argv])


class TestConfig:
    def test_defaults_match_primary_setup(self):
        cfg = load_config(None)
        assert (cfg.geometry.h, cfg.geometry.s, cfg.sampling.R) == (13, 5, "3")
        assert (cfg.train.learning_rate, cfg.train.batch_size, cfg.train.beta, cfg.train.dropout_p) == \
            (0.001, 256, 0.0005, 0.5)
        assert (cfg.inference.threshold, cfg.evaluation.tolerance) == (0.5, 2.0)

    def test_sections_parsed(self, config):
        cfg = load_config(config)
        assert cfg.geometry.s == 3 and cfg.synthetic.channels == 1 and cfg.train.iterations == 6

    def test_unknown_key(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[train]\nlearning_rte = 0.1\n")
        assert run("train", "--config", bad, "--synthetic", "--out", tmp_path / "o") == EXIT_CONFIG

    def test_unknown_section(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[nets]\nx = 1\n")
        assert run("train", "--config", bad, "--synthetic", "--out", tmp_path / "o") == EXIT_CONFIG

    def test_even_s_flag(self, config, tmp_path):
        assert run("train", "--config", config, "--synthetic", "--s", 4, "--out", tmp_path / "o") == EXIT_CONFIG

    def test_flag_overrides_file(self, config, tmp_path):
        out = tmp_path / "o"
        assert run("build-dataset", "--config", config, "--synthetic", "--ratio", 2, "--out", out) == 0
        resolved = configparser.ConfigParser()
        resolved.optionxform = str
        resolved.read(out / "resolved_config.ini")
        assert resolved["sampling"]["R"] == "2"
        assert resolved["geometry"]["s"] == "3"


class TestCommands:
    def test_gen_synthetic_layout(self, dataset):
        assert (dataset / "manifest.txt").exists()
        assert len(list((dataset / "images").glob("*.png"))) == 5
        assert len(list((dataset / "masks").glob("*.png"))) == 5

    def test_build_dataset_counts(self, dataset, config, tmp_path, capsys):
        out = tmp_path / "bd"
        assert run("build-dataset", "--config", config, "--data", dataset, "--out", out) == 0
        text = capsys.readouterr().out
        census = sum(int(load_mask(p).sum()) for p in sorted((dataset / "masks").glob("train*.png")))
        assert f"{census:,}" in text
        assert "1:3" in text
        sidecar = (out / "samples.txt").read_text().splitlines()
        assert len(sidecar) == census + 3 * census

    def test_train_predict_evaluate(self, dataset, config, tmp_path, capsys):
        out = tmp_path / "run"
        assert run("train", "--config", config, "--data", dataset, "--out", out) == 0
        model = load_checkpoint(out / "model.crkn", h=4)
        assert model.iterations_done == 6 and model.config.s == 3
        assert sorted(p.name for p in (out / "checkpoints").iterdir()) == ["iter_0000004.crkn", "iter_0000006.crkn"]
        assert len((out / "trace.csv").read_text().splitlines()) == 7

        pred = tmp_path / "pred"
        images = sorted((dataset / "images").glob("test*.png"))
        assert run("predict", "--config", config, "--checkpoint", out / "model.crkn", "--out", pred, "--raw",
                   "--threshold", 0.3, *images) == 0
        for img in images:
            assert (pred / f"{img.stem}.prob.png").exists()
            assert (pred / f"{img.stem}.mask.png").exists()
            assert (pred / f"{img.stem}.prob.npy").exists()
        resolved = (pred / "resolved_config.ini").read_text()
        assert "threshold = 0.3" in resolved

        gt = tmp_path / "gt"
        gt.mkdir()
        for img in images:
            (gt / img.name).write_bytes((dataset / "masks" / img.name).read_bytes())
        ev = tmp_path / "ev"
        capsys.readouterr()
        assert run("evaluate", "--pred", pred, "--gt", gt, "--out", ev) == 0
        rows = (ev / "report.csv").read_text().splitlines()
        assert rows[-2].startswith("micro,") and rows[-1].startswith("macro,")
        assert "micro" in (ev / "report.txt").read_text()

    def test_resume_continues_numbering(self, dataset, config, tmp_path):
        first = tmp_path / "a"
        assert run("train", "--config", config, "--data", dataset, "--out", first) == 0
        second = tmp_path / "b"
        assert run("train", "--config", config, "--data", dataset, "--out", second,
                   "--resume", first / "model.crkn", "--iterations", 3) == 0
        assert load_checkpoint(second / "model.crkn", h=4).iterations_done == 9
        first_row = (second / "trace.csv").read_text().splitlines()[1]
        assert first_row.startswith("6,")

    def test_seeded_rerun_identical(self, dataset, config, tmp_path):
        for name in ("a", "b"):
            assert run("train", "--config", config, "--data", dataset, "--seed", 5, "--out", tmp_path / name) == 0
        assert (tmp_path / "a" / "model.crkn").read_bytes() == (tmp_path / "b" / "model.crkn").read_bytes()
        assert (tmp_path / "a" / "trace.csv").read_text() == (tmp_path / "b" / "trace.csv").read_text()

    def test_perfect_predictions(self, tmp_path, capsys):
        gt = tmp_path / "gt"
        pred = tmp_path / "pred"
        gt.mkdir()
        pred.mkdir()
        m = np.zeros((10, 10), np.uint8)
        m[3:7, 5] = 255
        Image.fromarray(m).save(gt / "x.png")
        Image.fromarray(m).save(pred / "x.mask.png")
        assert run("evaluate", "--pred", pred, "--gt", gt, "--out", tmp_path / "ev") == 0
        rows = {line.split()[0]: line.split()[1:] for line in capsys.readouterr().out.splitlines()[1:]
                if not line.startswith("-")}
        assert rows["micro"] == rows["macro"] == ["1.0000"] * 3

    def test_missing_prediction_named(self, tmp_path, capsys):
        gt = tmp_path / "gt"
        pred = tmp_path / "pred"
        gt.mkdir()
        pred.mkdir()
        m = np.zeros((10, 10), np.uint8)
        for stem in ("a", "b"):
            Image.fromarray(m).save(gt / f"{stem}.png")
        Image.fromarray(m).save(pred / "a.mask.png")
        assert run("evaluate", "--pred", pred, "--gt", gt, "--out", tmp_path / "ev") == EXIT_DATA
        assert "b" in capsys.readouterr().err

    def test_channel_mismatch_names_file(self, dataset, config, tmp_path, capsys):
        out = tmp_path / "run"
        assert run("train", "--config", config, "--data", dataset, "--out", out) == 0
        rgb = tmp_path / "rgb.png"
        Image.fromarray(np.zeros((24, 24, 3), np.uint8)).save(rgb)
        assert run("predict", "--checkpoint", out / "model.crkn", "--h", 4, "--out", tmp_path / "p", rgb) == EXIT_DATA
        assert "rgb.png" in capsys.readouterr().err

    def test_missing_data(self, tmp_path):
        assert run("train", "--data", tmp_path / "nowhere", "--out", tmp_path / "o") == EXIT_DATA

    def test_infeasible_ratio(self, dataset, config, tmp_path):
        assert run("build-dataset", "--config", config, "--data", dataset, "--ratio", 1, "--total-cap", 10**7,
                   "--out", tmp_path / "o") == EXIT_DATA

    def test_sweep_structure(self, config, tmp_path, capsys):
        out = tmp_path / "sw"
        assert run("sweep-structure", "--config", config, "--synthetic", "--s-list", "1,3", "--iterations", 2,
                   "--out", out) == 0
        table = (out / "sweep_structure.txt").read_text().splitlines()
        assert len(table) == 3

    def test_sweep_structure_even(self, config, tmp_path):
        assert run("sweep-structure", "--config", config, "--synthetic", "--s-list", "1,2",
                   "--out", tmp_path / "o") == EXIT_CONFIG

    def test_sweep_ratio(self, config, tmp_path):
        out = tmp_path / "sr"
        assert run("sweep-ratio", "--config", config, "--synthetic", "--r-list", "1,natural", "--total", 80,
                   "--iterations", 2, "--out", out) == 0
        assert "nat(" in (out / "sweep_ratio.txt").read_text()

    def test_sweep_ratio_needs_total(self, config, tmp_path):
        assert run("sweep-ratio", "--config", config, "--synthetic", "--out", tmp_path / "o") == EXIT_CONFIG

    def test_cross_test_gray_to_rgb(self, config, tmp_path, capsys):
        gray = tmp_path / "gray"
        rgb = tmp_path / "rgb"
        assert run("gen-synthetic", "--config", config, "--out", gray) == 0
        assert run("gen-synthetic", "--config", config, "--channels", 3, "--out", rgb) == 0
        out = tmp_path / "ct"
        assert run("cross-test", "--config", config, "--train-data", gray, "--test-data", rgb, "--out", out) == 0
        assert load_checkpoint(out / "model.crkn", h=4).config.input_channels == 1
        assert "gray->rgb" in (out / "cross_test.csv").read_text()

    def test_cross_test_hybrid(self, config, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert run("gen-synthetic", "--config", config, "--out", a) == 0
        assert run("gen-synthetic", "--config", config, "--out", b, "--seed", 3) == 0
        out = tmp_path / "hy"
        assert run("cross-test", "--config", config, "--train-data", a, "--test-data", b, "--hybrid", "--ratio", 1,
                   "--out", out) == 0
        stems = (out / "hybrid_stems.txt").read_text().split()
        assert stems == ["train0000", "train0000"]
