import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from cracknet.io import (CheckpointShapeError, CheckpointVersionError, CorruptCheckpointError, DataError,
                         denormalize, load_checkpoint, load_corpus, load_image, load_mask, match_channels,
                         normalize, pad_symmetric, quantize, read_manifest, save_binary_mask, save_checkpoint,
                         save_probability_map, write_corpus)
from cracknet.network import NetworkConfig, build_network


def _png(path, arr):
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path)
    return path


class TestNormalization:
    def test_endpoints(self, tmp_path):
        img = load_image(_png(tmp_path / "a.png", np.array([[0, 255, 128]])))
        assert img.values[0, 0, 0] == -1.0
        assert img.values[0, 1, 0] == 1.0
        assert img.values[0, 2, 0] == pytest.approx(128 / 127.5 - 1, abs=1e-7)
        assert img.values[0, 2, 0] == pytest.approx(0.0039, abs=1e-4)

    def test_rgb_shape(self, tmp_path):
        rng = np.random.default_rng(0)
        img = load_image(_png(tmp_path / "rgb.png", rng.integers(0, 256, (320, 480, 3))))
        assert (img.height, img.width, img.channels) == (320, 480, 3)
        assert img.values.dtype == np.float32

    def test_gray_keeps_one_channel(self, tmp_path):
        img = load_image(_png(tmp_path / "g.png", np.zeros((4, 5))))
        assert img.values.shape == (4, 5, 1)

    def test_roundtrip_all_levels(self):
        v = np.arange(256)
        np.testing.assert_allclose(denormalize(normalize(v)), v, atol=1e-4)

    def test_unreadable_file(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"not a png")
        with pytest.raises(DataError):
            load_image(bad)

    def test_sixteen_bit_rejected(self, tmp_path):
        path = tmp_path / "deep.png"
        Image.fromarray(np.zeros((3, 3), dtype=np.uint16)).save(path)
        with pytest.raises(DataError):
            load_image(path)


class TestMasks:
    def test_all_black_and_white(self, tmp_path):
        assert load_mask(_png(tmp_path / "b.png", np.zeros((3, 4)))).sum() == 0
        assert load_mask(_png(tmp_path / "w.png", np.full((3, 4), 255))).all()

    def test_threshold_127(self, tmp_path):
        m = load_mask(_png(tmp_path / "m.png", np.array([[127, 128, 200, 0]])))
        assert m.tolist() == [[0, 1, 1, 0]]
        assert m.dtype == np.uint8


class TestPadding:
    def test_identity(self):
        x = np.arange(12.0).reshape(3, 4)
        np.testing.assert_array_equal(pad_symmetric(x, 0), x)

    def test_row_example(self):
        row = np.array([[1.0, 2.0, 3.0]] * 3)
        out = pad_symmetric(row, 2)
        assert out[2].tolist() == [2, 1, 1, 2, 3, 3, 2]

    def test_full_size_image(self):
        assert pad_symmetric(np.zeros((320, 480, 3)), 13).shape == (346, 506, 3)

    @pytest.mark.parametrize("h", [3, 5])
    def test_rejects_large_h(self, h):
        with pytest.raises(ValueError):
            pad_symmetric(np.zeros((3, 10)), h)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            pad_symmetric(np.zeros((3, 3)), -1)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 9), st.integers(2, 9), st.data())
    def test_centre_kept_and_no_new_values(self, hgt, wid, data):
        h = data.draw(st.integers(0, min(hgt, wid) - 1))
        x = np.arange(hgt * wid, dtype=float).reshape(hgt, wid)
        out = pad_symmetric(x, h)
        assert out.shape == (hgt + 2 * h, wid + 2 * h)
        np.testing.assert_array_equal(out[h:h + hgt, h:h + wid], x)
        assert np.isin(out, x).all()


class TestChannels:
    def test_luma(self):
        rgb = np.array([[[1.0, 0.0, -1.0]]], dtype=np.float32)
        assert match_channels(rgb, 1)[0, 0, 0] == pytest.approx(0.299 - 0.114)

    def test_replicate(self):
        g = np.array([[[0.25]]], dtype=np.float32)
        assert match_channels(g, 3).tolist() == [[[0.25, 0.25, 0.25]]]

    def test_same_is_passthrough(self):
        g = np.zeros((2, 2, 3))
        assert match_channels(g, 3) is g


class TestMapOutput:
    @pytest.mark.parametrize("p, level", [(1.0, 255), (0.0, 0), (0.5, 128), (0.2, 51)])
    def test_quantize(self, p, level):
        assert quantize(np.array([p]))[0] == level

    @pytest.mark.parametrize("bad", [-0.01, 1.01, np.nan])
    def test_out_of_range(self, bad):
        with pytest.raises(ValueError):
            quantize(np.array([bad]))

    def test_roundtrip_within_quantum(self, tmp_path):
        p = np.random.default_rng(1).random((17, 23))
        save_probability_map(p, tmp_path / "p.prob.png", raw=True)
        back = np.asarray(Image.open(tmp_path / "p.prob.png"), dtype=float) / 255
        assert np.abs(back - p).max() <= 1 / 255
        np.testing.assert_array_equal(np.load(tmp_path / "p.prob.npy"), p.astype(np.float32))

    def test_binary_mask(self, tmp_path):
        m = np.array([[0, 1], [1, 0]])
        save_binary_mask(m, tmp_path / "m.png")
        np.testing.assert_array_equal(load_mask(tmp_path / "m.png"), m)
        with pytest.raises(ValueError):
            save_binary_mask(np.array([[2]]), tmp_path / "x.png")


@pytest.fixture
def trained_like_model():
    model = build_network(NetworkConfig(input_channels=1, s=3), seed=7)
    rng = np.random.default_rng(3)
    for prm in model.layers:
        prm.m_weights[...] = rng.standard_normal(prm.weights.shape)
        prm.v_biases[...] = rng.random(prm.biases.shape)
    model.iterations_done = 1234
    model.seed = 99
    model.ratio = 3.0
    return model


class TestCheckpoint:
    def test_bitwise_roundtrip(self, tmp_path, trained_like_model):
        path = tmp_path / "m.crkn"
        save_checkpoint(trained_like_model, path)
        back = load_checkpoint(path)
        assert back.iterations_done == 1234 and back.seed == 99 and back.ratio == 3.0
        assert back.config.input_channels == 1 and back.config.s == 3
        for a, b in zip(trained_like_model.layers, back.layers):
            for name in ("weights", "biases", "m_weights", "m_biases", "v_weights", "v_biases"):
                assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
            assert b.step_count == 1234
        save_checkpoint(back, tmp_path / "again.crkn")
        assert (tmp_path / "again.crkn").read_bytes() == path.read_bytes()

    def test_header_layout(self, tmp_path, trained_like_model):
        path = tmp_path / "m.crkn"
        save_checkpoint(trained_like_model, path)
        raw = path.read_bytes()
        assert raw[:4] == b"CRKN"
        assert np.frombuffer(raw[4:20], "<u4").tolist() == [1, 1, 3, 42]

    def test_truncated(self, tmp_path, trained_like_model):
        path = tmp_path / "m.crkn"
        save_checkpoint(trained_like_model, path)
        path.write_bytes(path.read_bytes()[:-9])
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.crkn").write_bytes(b"NOPE" + bytes(40))
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(tmp_path / "x.crkn")

    def test_version(self, tmp_path, trained_like_model):
        path = tmp_path / "m.crkn"
        save_checkpoint(trained_like_model, path)
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(path)

    def test_shape_mismatch(self, tmp_path):
        path = tmp_path / "s5.crkn"
        save_checkpoint(build_network(NetworkConfig(input_channels=3, s=5)), path)
        with pytest.raises(CheckpointShapeError):
            load_checkpoint(path, s=3)
        with pytest.raises(CheckpointShapeError):
            load_checkpoint(path, channels=1)
        with pytest.raises(CheckpointShapeError):
            load_checkpoint(path, h=6)


class TestCorpusDirectory:
    def test_write_and_load(self, tmp_path):
        rng = np.random.default_rng(0)
        items = [(f"im{i}", rng.integers(0, 256, (8, 9, 3)), rng.integers(0, 2, (8, 9))) for i in range(3)]
        write_corpus(tmp_path, items, {"train": ["im0", "im2"], "test": ["im1"]})
        assert read_manifest(tmp_path / "manifest.txt") == {"train": ["im0", "im2"], "test": ["im1"]}
        train = load_corpus(tmp_path, "train")
        assert [it.stem for it in train] == ["im0", "im2"]
        np.testing.assert_array_equal(train[1].mask, items[2][2])
        np.testing.assert_allclose(train[0].image, normalize(items[0][1]))

    def test_missing_mask(self, tmp_path):
        write_corpus(tmp_path, [("a", np.zeros((4, 4)), np.zeros((4, 4)))], {"train": ["a", "b"]})
        with pytest.raises(DataError, match="b"):
            load_corpus(tmp_path, "train")

    def test_missing_split(self, tmp_path):
        write_corpus(tmp_path, [("a", np.zeros((4, 4)), np.zeros((4, 4)))], {"train": ["a"]})
        with pytest.raises(DataError):
            load_corpus(tmp_path, "test")

    def test_size_mismatch(self, tmp_path):
        write_corpus(tmp_path, [("a", np.zeros((4, 4)), np.zeros((4, 4)))], {"train": ["a"]})
        _png(tmp_path / "masks" / "a.png", np.zeros((5, 4)))
        with pytest.raises(DataError):
            load_corpus(tmp_path, "train")

    def test_manifest_stem_before_section(self, tmp_path):
        (tmp_path / "manifest.txt").write_text("orphan\n[train]\na\n")
        with pytest.raises(DataError):
            read_manifest(tmp_path / "manifest.txt")
