"""Dataset formats (IDX, CIFAR binary, SNNF), encoding, augmentation."""

import numpy as np
import pytest

from dsr.data import (
    Dataset,
    FormatError,
    FrameSequence,
    augment,
    batches,
    encode_static,
    fit_frames_to_steps,
    load_cifar_binary,
    load_frames,
    load_idx,
    make_digits,
    normalize,
    resize_frames_nearest,
    write_cifar_binary,
    write_frames,
    write_idx,
)
from dsr.representation import rep_input
from dsr.neuron import IF, LIF
from dsr.tensor import ParameterError


class TestIdx:
    def write(self, tmp_path, images, labels):
        ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
        write_idx(ip, lp, images, labels)
        return ip, lp

    def test_scale_endpoint(self, tmp_path):
        ip, lp = self.write(tmp_path, np.ones((1, 1, 1, 1)), np.array([3]))
        ds = load_idx(ip, lp)
        assert ds.samples[0, 0, 0, 0] == 1.0
        assert ds.labels.tolist() == [3]

    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, size=(2, 1, 5, 7)).astype(np.float64) / 255.0
        labels = np.array([4, 9])
        ip, lp = self.write(tmp_path, images, labels)
        ds = load_idx(ip, lp)
        assert ds.samples.shape == (2, 1, 5, 7)
        assert np.allclose(ds.samples, images)
        assert np.array_equal(ds.labels, labels)

    def test_bad_magic(self, tmp_path):
        ip, lp = self.write(tmp_path, np.zeros((1, 1, 2, 2)), np.array([0]))
        raw = bytearray(ip.read_bytes())
        raw[3] = 0x42
        ip.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_idx(ip, lp)

    def test_truncated(self, tmp_path):
        ip, lp = self.write(tmp_path, np.zeros((2, 1, 4, 4)), np.array([0, 1]))
        ip.write_bytes(ip.read_bytes()[:-5])
        with pytest.raises(FormatError):
            load_idx(ip, lp)

    def test_count_mismatch(self, tmp_path):
        ip, lp = tmp_path / "a.idx", tmp_path / "al.idx"
        write_idx(ip, lp, np.zeros((2, 1, 2, 2)), np.array([0, 1]))
        ip1, lp1 = tmp_path / "b.idx", tmp_path / "bl.idx"
        write_idx(ip1, lp1, np.zeros((1, 1, 2, 2)), np.array([0]))
        with pytest.raises(FormatError):
            load_idx(ip, lp1)


class TestCifar:
    def test_single_record(self, tmp_path):
        p = tmp_path / "c.bin"
        write_cifar_binary(p, np.zeros((1, 3, 32, 32)), np.array([7]))
        ds = load_cifar_binary(p)
        assert ds.labels.tolist() == [7]
        assert np.all(ds.samples == 0.0)

    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        images = rng.integers(0, 256, size=(2, 3, 32, 32)).astype(np.float64) / 255.0
        labels = np.array([2, 5])
        p = tmp_path / "c.bin"
        write_cifar_binary(p, images, labels)
        ds = load_cifar_binary(p)
        assert np.allclose(ds.samples, images)
        assert np.array_equal(ds.labels, labels)

    def test_bad_length(self, tmp_path):
        p = tmp_path / "c.bin"
        p.write_bytes(b"\x00" * 3072)  # one byte short of a record
        with pytest.raises(FormatError):
            load_cifar_binary(p)

    def test_empty(self, tmp_path):
        p = tmp_path / "c.bin"
        p.write_bytes(b"")
        with pytest.raises(FormatError):
            load_cifar_binary(p)


class TestSnnf:
    def test_zero_frame(self, tmp_path):
        p = tmp_path / "f.snnf"
        write_frames(p, np.zeros((1, 2, 3, 3)))
        fs = load_frames(p)
        assert fs.frames.shape == (1, 2, 3, 3)
        assert np.all(fs.frames == 0.0)

    def test_roundtrip_20_frames(self, tmp_path):
        rng = np.random.default_rng(2)
        frames = rng.random((20, 2, 4, 4)).astype(np.float32).astype(np.float64)
        p = tmp_path / "f.snnf"
        write_frames(p, frames)
        assert np.allclose(load_frames(p).frames, frames)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "f.snnf"
        write_frames(p, np.zeros((1, 1, 2, 2)))
        raw = bytearray(p.read_bytes())
        raw[0] = ord("X")
        p.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_frames(p)

    def test_trailing_bytes(self, tmp_path):
        p = tmp_path / "f.snnf"
        write_frames(p, np.zeros((1, 1, 2, 2)))
        p.write_bytes(p.read_bytes() + b"\x00")
        with pytest.raises(FormatError):
            load_frames(p)

    def test_fit_frames(self):
        frames = np.arange(3)[:, None, None, None] * np.ones((3, 1, 2, 2))
        assert fit_frames_to_steps(frames, 2).shape[0] == 2
        cycled = fit_frames_to_steps(frames, 7)
        assert cycled.shape[0] == 7
        assert cycled[3, 0, 0, 0] == 0.0  # wraps around

    def test_resize_nearest(self):
        frames = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        out = resize_frames_nearest(frames, 2)
        assert out.shape == (1, 1, 2, 2)
        assert out[0, 0, 0, 0] == frames[0, 0, 0, 0]


class TestEncoding:
    def test_unit_time_axis(self):
        x = np.random.default_rng(3).random((2, 1, 4, 4))
        assert encode_static(x, 1).shape == (1, 2, 1, 4, 4)

    def test_identical_slices(self):
        x = np.random.default_rng(4).random((3, 5))
        frames = encode_static(x, 5)
        assert all(np.array_equal(frames[i], x) for i in range(5))

    def test_rep_input_identity(self):
        x = np.random.default_rng(5).random((2, 3))
        frames = encode_static(x, 7)
        assert np.allclose(rep_input(frames, IF).o, x, atol=1e-15)
        o_lif = rep_input(frames, LIF, np.exp(-0.05), 0.05).o
        assert np.allclose(o_lif, x / 0.05)

    def test_invalid_n(self):
        with pytest.raises(ParameterError):
            encode_static(np.zeros((1, 2)), 0)


class TestNormalizeAugment:
    def test_normalize_identity(self):
        x = np.random.default_rng(6).random((2, 3, 4, 4))
        assert np.array_equal(normalize(x, [0, 0, 0], [1, 1, 1]), x)

    def test_constant_goes_to_zero(self):
        x = np.full((1, 2, 3, 3), 0.5)
        out = normalize(x, [0.5, 0.5], [0.1, 0.2])
        assert np.allclose(out, 0.0)

    def test_statistics(self):
        rng = np.random.default_rng(7)
        x = rng.normal(2.0, 3.0, size=(200, 1, 8, 8))
        mean = x.mean()
        std = x.std()
        out = normalize(x, [mean], [std])
        assert abs(out.mean()) < 1e-6

    def test_zero_std_rejected(self):
        with pytest.raises(ParameterError):
            normalize(np.zeros((1, 1, 2, 2)), [0.0], [0.0])

    def test_augment_identity(self):
        x = np.random.default_rng(8).random((1, 6, 6))
        assert np.array_equal(augment(x, 0, 0.0), x)

    def test_augment_preserves_shape(self):
        x = np.random.default_rng(9).random((3, 8, 8))
        out = augment(x, 2, 0.5, np.random.default_rng(0))
        assert out.shape == x.shape

    def test_augment_deterministic(self):
        x = np.random.default_rng(10).random((1, 8, 8))
        a = augment(x, 2, 0.5, np.random.default_rng(42))
        b = augment(x, 2, 0.5, np.random.default_rng(42))
        assert np.array_equal(a, b)

    def test_double_flip_identity(self):
        x = np.random.default_rng(11).random((1, 4, 4))
        assert np.array_equal(x[..., ::-1][..., ::-1], x)


class TestDataset:
    def test_count_mismatch(self):
        with pytest.raises(FormatError):
            Dataset(np.zeros((2, 1, 2, 2)), np.zeros(3, dtype=int), 10)

    def test_label_range(self):
        with pytest.raises(FormatError):
            Dataset(np.zeros((1, 1, 2, 2)), np.array([10]), 10)

    def test_frame_sequence_validation(self):
        with pytest.raises(FormatError):
            FrameSequence(frames=np.zeros((2, 3)))
        with pytest.raises(FormatError):
            FrameSequence(frames=np.full((1, 1, 2, 2), np.nan))


class TestMakeDigits:
    def test_shapes_and_range(self):
        ds = make_digits(3, seed=0, noise=0.1)
        assert ds.samples.shape == (30, 1, 16, 16)
        assert ds.samples.min() >= 0.0 and ds.samples.max() <= 1.0
        assert sorted(np.unique(ds.labels)) == list(range(10))

    def test_deterministic(self):
        a = make_digits(2, seed=1, noise=0.1)
        b = make_digits(2, seed=1, noise=0.1)
        assert np.array_equal(a.samples, b.samples)
        assert np.array_equal(a.labels, b.labels)

    def test_seed_changes_data(self):
        a = make_digits(2, seed=1, noise=0.1)
        b = make_digits(2, seed=2, noise=0.1)
        assert not np.array_equal(a.samples, b.samples)

    def test_classes_distinguishable(self):
        # nearest-centroid accuracy well above chance on held-out renders
        train = make_digits(30, seed=0, noise=0.05)
        test = make_digits(10, seed=99, noise=0.05)
        cents = np.stack([
            train.samples[train.labels == d].mean(axis=0).ravel() for d in range(10)
        ])
        preds = [
            int(np.argmin(((cents - s.ravel()) ** 2).sum(axis=1)))
            for s in test.samples
        ]
        acc = float(np.mean(np.asarray(preds) == test.labels))
        assert acc > 0.8


class TestBatches:
    def test_covers_dataset(self):
        ds = make_digits(2, seed=0, noise=0.0)
        seen = 0
        for s, l in batches(ds, 7, np.random.default_rng(0)):
            assert s.shape[0] == l.shape[0]
            seen += s.shape[0]
        assert seen == len(ds)

    def test_unshuffled_order(self):
        ds = make_digits(1, seed=0, noise=0.0)
        s, l = next(batches(ds, 4, shuffle=False))
        assert np.array_equal(s, ds.samples[:4])
        assert np.array_equal(l, ds.labels[:4])

    def test_invalid_batch_size(self):
        ds = make_digits(1, seed=0, noise=0.0)
        with pytest.raises(ParameterError):
            next(batches(ds, 0))
