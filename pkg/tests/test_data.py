import struct

import numpy as np
import pytest

from alphagan.data import (
    BadMagicError,
    CountMismatchError,
    IdxError,
    TruncatedFileError,
    grid_of_gaussians,
    idx_load,
    make_dataset,
    procedural_shapes,
    read_idx_images,
    read_idx_labels,
    ring_mixture,
    ring_of_gaussians,
    splits_disjoint,
    write_idx_images,
    write_idx_labels,
)

IMAGE_BYTES = bytes(range(0, 32 * 8, 8))  # 32 pixels: 0, 8, ..., 248


def write_golden(tmp_path):
    images = tmp_path / "images.idx"
    labels = tmp_path / "labels.idx"
    images.write_bytes(bytes.fromhex("00000803 00000002 00000004 00000004") + IMAGE_BYTES)
    labels.write_bytes(bytes.fromhex("00000801 00000002") + bytes([3, 7]))
    return images, labels


class TestRing:
    def test_four_mode_geometry(self):
        np.testing.assert_allclose(ring_mixture(4, 1.0).means, [[1, 0], [0, 1], [-1, 0], [0, -1]], atol=1e-15)

    def test_defaults(self):
        ds = ring_of_gaussians(n_per_split=10)
        assert ds.mixture.n_modes == 8
        assert ds.mixture.sigma == 0.02
        np.testing.assert_allclose(np.linalg.norm(ds.mixture.means, axis=1), 2.0)

    def test_sample_mean_near_origin(self):
        ds = ring_of_gaussians(n_per_split=(100000, 1, 1), seed=3)
        assert np.all(np.abs(ds.train.mean(axis=0)) < 0.02)

    def test_seeded(self):
        a, b = ring_of_gaussians(n_per_split=50, seed=2), ring_of_gaussians(n_per_split=50, seed=2)
        for k in ("train", "valid", "test"):
            assert getattr(a, k).tobytes() == getattr(b, k).tobytes()
        assert ring_of_gaussians(n_per_split=50, seed=3).train.tobytes() != a.train.tobytes()

    def test_splits_disjoint(self):
        assert splits_disjoint(ring_of_gaussians(n_per_split=500))

    def test_invalid(self):
        with pytest.raises(ValueError):
            ring_of_gaussians(n_modes=1)
        with pytest.raises(ValueError):
            ring_of_gaussians(sigma=0.0)
        with pytest.raises(ValueError):
            ring_of_gaussians(n_per_split=(10, 0, 10))

    def test_splits_read_only(self):
        ds = ring_of_gaussians(n_per_split=5)
        with pytest.raises(ValueError):
            ds.train[0, 0] = 1.0


class TestGrid:
    def test_centered_grid(self):
        ds = grid_of_gaussians(n_per_split=10)
        assert ds.mixture.n_modes == 25
        np.testing.assert_allclose(ds.mixture.means.mean(axis=0), 0.0, atol=1e-12)
        assert ds.mixture.means.max() == 4.0

    def test_per_mode_covariance(self):
        ds = grid_of_gaussians(side=2, n_per_split=(40000, 1, 1), seed=1)
        near = np.argmin(((ds.train[:, None] - ds.mixture.means[None]) ** 2).sum(2), axis=1)
        for k in range(4):
            cov = np.cov((ds.train[near == k] - ds.mixture.means[k]).T)
            np.testing.assert_allclose(cov, 0.05**2 * np.eye(2), atol=2.5e-4)

    def test_deterministic(self):
        assert grid_of_gaussians(n_per_split=20).train.tobytes() == grid_of_gaussians(n_per_split=20).train.tobytes()


class TestShapes:
    def test_balanced_labels_and_range(self):
        ds = procedural_shapes(n_per_split=(400, 80, 80))
        for labels in (ds.train_labels, ds.valid_labels, ds.test_labels):
            counts = np.bincount(labels, minlength=4)
            assert np.all(counts == counts[0])
        assert ds.train.min() >= -1.0 and ds.train.max() <= 1.0
        assert ds.train.shape == (400, 256)
        assert ds.image_shape == (16, 16)

    def test_deterministic(self):
        a = procedural_shapes(n_per_split=(40, 8, 8), seed=9)
        b = procedural_shapes(n_per_split=(40, 8, 8), seed=9)
        assert a.train.tobytes() == b.train.tobytes()

    def test_classes_differ(self):
        ds = procedural_shapes(n_classes=8, n_per_split=(800, 8, 8))
        means = np.stack([ds.train[ds.train_labels == k].mean(0) for k in range(8)])
        d = np.linalg.norm(means[:, None] - means[None], axis=2)
        assert d[~np.eye(8, dtype=bool)].min() > 1.0

    def test_disjoint(self):
        assert splits_disjoint(procedural_shapes(n_per_split=(200, 40, 40)))

    def test_invalid(self):
        with pytest.raises(ValueError):
            procedural_shapes(n_classes=9)
        with pytest.raises(ValueError):
            procedural_shapes(n_per_split=(41, 8, 8))


class TestIdx:
    def test_golden_images(self, tmp_path):
        images, _ = write_golden(tmp_path)
        raw = read_idx_images(images)
        assert raw.shape == (2, 4, 4)
        np.testing.assert_array_equal(raw.ravel(), np.arange(0, 256, 8))

    def test_golden_labels(self, tmp_path):
        _, labels = write_golden(tmp_path)
        np.testing.assert_array_equal(read_idx_labels(labels), [3, 7])

    def test_golden_dataset(self, tmp_path):
        images, labels = write_golden(tmp_path)
        ds = idx_load(images, labels, seed=0)
        rows = np.concatenate([ds.train, ds.valid, ds.test])
        lab = np.concatenate([ds.train_labels, ds.valid_labels, ds.test_labels])
        expected = np.arange(0, 256, 8, dtype=np.float64).reshape(2, 16) / 127.5 - 1.0
        for row, y in zip(rows, lab):
            np.testing.assert_array_equal(row, expected[0 if y == 3 else 1])
        assert ds.image_shape == (4, 4)

    def test_pixel_endpoints(self, tmp_path):
        path = tmp_path / "ends.idx"
        write_idx_images(path, np.array([[[0, 255]]] * 10))
        ds = idx_load(path)
        assert ds.train.min() == -1.0 and ds.train.max() == 1.0

    def test_split_80_10_10(self, tmp_path):
        path = tmp_path / "ten.idx"
        write_idx_images(path, np.arange(100).reshape(100, 1, 1))
        ds = idx_load(path, seed=1)
        assert (len(ds.train), len(ds.valid), len(ds.test)) == (80, 10, 10)
        assert splits_disjoint(ds)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_bytes(struct.pack(">IIII", 0x00000802, 1, 1, 1) + b"\x00")
        with pytest.raises(BadMagicError, match="magic"):
            read_idx_images(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "short.idx"
        path.write_bytes(bytes.fromhex("00000803 0000"))
        with pytest.raises(TruncatedFileError, match="truncated file"):
            read_idx_images(path)

    def test_truncated_body(self, tmp_path):
        images, _ = write_golden(tmp_path)
        images.write_bytes(images.read_bytes()[:-1])
        with pytest.raises(TruncatedFileError):
            read_idx_images(images)

    def test_count_mismatch(self, tmp_path):
        images, labels = write_golden(tmp_path)
        write_idx_labels(labels, [1, 2, 3])
        with pytest.raises(CountMismatchError):
            idx_load(images, labels)

    def test_errors_are_distinct(self):
        kinds = {BadMagicError, TruncatedFileError, CountMismatchError}
        assert len(kinds) == 3
        assert all(issubclass(k, IdxError) and issubclass(k, ValueError) for k in kinds)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            idx_load(tmp_path / "nope.idx")


class TestMakeDataset:
    def test_ring(self):
        ds = make_dataset({"name": "ring", "n_per_split": [10, 5, 5], "seed": 1})
        assert ds.train.shape == (10, 2)

    def test_unknown_name(self):
        with pytest.raises(ValueError, match="unknown dataset"):
            make_dataset({"name": "celeba"})

    def test_bad_parameter(self):
        with pytest.raises(ValueError, match="bad parameters"):
            make_dataset({"name": "ring", "modes": 3})
