import gzip
import struct

import numpy as np
import pytest

from biflow import datasets
from biflow.datasets import ImageBatch, MaskOperator
from biflow.exceptions import BadMagic, DimensionMismatch, InsufficientSamples, NotPositiveDefinite, TruncatedFile
from biflow.sampling import Rng, SampleBatch, empirical_moments


def _idx_bytes(magic, shape, payload):
    return struct.pack(">I", magic) + struct.pack(f">{len(shape)}I", *shape) + bytes(payload)


def test_hand_built_idx_file(tmp_path):
    path = tmp_path / "tiny.idx"
    path.write_bytes(_idx_bytes(0x803, (1, 2, 2), [0, 255, 128, 64]))
    batch = datasets.load_idx(path)
    assert (batch.count, batch.height, batch.width) == (1, 2, 2)
    np.testing.assert_allclose(batch.pixels[0], [[0, 1], [128 / 255, 64 / 255]])


def test_label_file(tmp_path):
    path = tmp_path / "labels.idx"
    path.write_bytes(_idx_bytes(0x801, (3,), [7, 0, 9]))
    np.testing.assert_array_equal(datasets.load_idx(path), [7, 0, 9])


def test_gzip_is_transparent(tmp_path):
    path = tmp_path / "tiny.idx.gz"
    path.write_bytes(gzip.compress(_idx_bytes(0x803, (2, 1, 1), [10, 20])))
    assert datasets.load_idx(path).count == 2


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.idx"
    path.write_bytes(_idx_bytes(0x804, (1, 1, 1), [0]))
    with pytest.raises(BadMagic):
        datasets.load_idx(path)


@pytest.mark.parametrize("raw", [b"\x00\x00", _idx_bytes(0x803, (1, 2, 2), [1, 2, 3])[:10],
                                 _idx_bytes(0x803, (1, 2, 2), [1, 2, 3])])
def test_truncated(tmp_path, raw):
    path = tmp_path / "short.idx"
    path.write_bytes(raw)
    with pytest.raises(TruncatedFile):
        datasets.load_idx(path)


def test_corrupt_gzip_is_truncated(tmp_path):
    path = tmp_path / "cut.idx.gz"
    path.write_bytes(gzip.compress(_idx_bytes(0x803, (1, 2, 2), [1, 2, 3, 4]))[:-6])
    with pytest.raises(TruncatedFile):
        datasets.load_idx(path)


def test_trailing_bytes(tmp_path):
    path = tmp_path / "long.idx"
    path.write_bytes(_idx_bytes(0x803, (1, 1, 2), [1, 2, 3]))
    with pytest.raises(DimensionMismatch):
        datasets.load_idx(path)


@pytest.mark.parametrize("name", ["img.idx", "img.idx.gz"])
def test_save_load_round_trip(tmp_path, name):
    pixels = np.random.default_rng(0).integers(0, 256, size=(5, 4, 6)) / 255.0
    datasets.save_idx(tmp_path / name, ImageBatch(pixels))
    assert np.array_equal(datasets.load_idx(tmp_path / name).pixels, pixels)


def test_gzip_output_is_reproducible(tmp_path):
    batch = ImageBatch(np.full((2, 2, 2), 0.5))
    datasets.save_idx(tmp_path / "a.gz", batch)
    datasets.save_idx(tmp_path / "b.gz", batch)
    assert (tmp_path / "a.gz").read_bytes() == (tmp_path / "b.gz").read_bytes()


def test_image_batch_validation():
    with pytest.raises(ValueError):
        ImageBatch(np.full((1, 2, 2), 1.5))
    with pytest.raises(DimensionMismatch):
        ImageBatch(np.zeros((1, 2, 2, 2)))


def test_downscale_examples():
    ones = ImageBatch(np.ones((1, 28, 28)))
    assert np.array_equal(datasets.downscale(ones).pixels, np.ones((1, 14, 14)))
    img = ImageBatch(np.array([[[0.0, 1.0], [1.0, 0.0]]]))
    assert datasets.downscale(img).pixels[0, 0, 0] == pytest.approx(0.5)
    with pytest.raises(DimensionMismatch):
        datasets.downscale(ImageBatch(np.zeros((1, 3, 3))))


def test_bottom_half_mask():
    op = MaskOperator.bottom_half(4, 3)
    assert op.n_observed == 6 and op.total_pixels == 12
    np.testing.assert_array_equal(op.hidden_indices, np.arange(6, 12))
    np.testing.assert_array_equal(MaskOperator.from_name("bottom-half", 4, 3).keep_indices, op.keep_indices)
    assert MaskOperator.from_dict(op.to_dict()).n_observed == 6


def test_mask_is_linear_and_idempotent(rng):
    op = MaskOperator.bottom_half(6, 6)
    u, v = rng.normal((3, 36)), rng.normal((3, 36))
    np.testing.assert_allclose(datasets.apply_mask(op, 2 * u + v), 2 * datasets.apply_mask(op, u) + datasets.apply_mask(op, v))
    once = datasets.apply_mask(op, u)
    np.testing.assert_array_equal(datasets.apply_mask(op, datasets.embed(op, once)), once)
    np.testing.assert_array_equal(u @ op.matrix().T, once)


def test_mask_validation():
    with pytest.raises(ValueError):
        MaskOperator(np.array([3, 1]), 5)
    with pytest.raises(ValueError):
        MaskOperator.from_name("left-half", 4, 4)
    with pytest.raises(DimensionMismatch):
        datasets.apply_mask(MaskOperator.bottom_half(2, 2), np.zeros(5))


def test_build_pairs_noise_statistics():
    op = MaskOperator.bottom_half(4, 4)
    images = np.full((20_000, 16), 0.3)
    pairs = datasets.build_pairs(images, op, 0.05, rng=1)
    resid = pairs.values[:, 16:] - 0.3
    assert abs(resid.std() - 0.05) < 1e-3 and abs(resid.mean()) < 1e-3
    assert pairs.block_split == (16, 8)


def test_build_pairs_noiseless_and_empty():
    op = MaskOperator.bottom_half(2, 2)
    pairs = datasets.build_pairs(np.arange(8).reshape(2, 4) / 10, op, 0.0)
    np.testing.assert_array_equal(pairs.values[:, 4:], [[0.0, 0.1], [0.4, 0.5]])
    assert datasets.build_pairs(np.zeros((0, 4)), op, 0.1).values.shape == (0, 6)


def test_two_point_empirical_gaussian():
    pairs = SampleBatch(np.array([[0.0, 1.0], [2.0, 3.0]]), (1, 1))
    model = datasets.fit_empirical_gaussian(pairs, ridge=0.0)
    np.testing.assert_allclose(model.mean, [1.0, 2.0])
    np.testing.assert_allclose(model.covariance, [[2.0, 2.0], [2.0, 2.0]])
    with pytest.raises(InsufficientSamples):
        datasets.fit_empirical_gaussian(SampleBatch(np.zeros((1, 2)), (1, 1)))


def test_empirical_gaussian_matches_moments(rng):
    pairs = SampleBatch(rng.normal((500, 3)), (2, 1))
    mean, cov = empirical_moments(pairs)
    model = datasets.fit_empirical_gaussian(pairs, ridge=0.0)
    np.testing.assert_allclose(model.mean, mean)
    np.testing.assert_allclose(model.covariance, cov, atol=1e-14)


@pytest.fixture(scope="module")
def mnist_pairs(mnist_batch):
    small = datasets.downscale(mnist_batch[:4900])
    op = MaskOperator.bottom_half(14, 14)
    return datasets.build_pairs(small, op, 0.05, rng=0)


def test_mnist_needs_ridge(mnist_pairs):
    model = datasets.fit_empirical_gaussian(mnist_pairs, ridge=0.0)
    with pytest.raises(NotPositiveDefinite):
        datasets.affine_bidirectional(model)


def test_ridge_bounds_smallest_eigenvalue(mnist_pairs):
    model = datasets.fit_empirical_gaussian(mnist_pairs, ridge=1e-3)
    eig = np.linalg.eigvalsh(model.covariance / model.scale)
    assert eig.min() >= 1e-3 * (1 - 1e-9)
    S = datasets.affine_bidirectional(model)
    z = Rng(0).normal((50, S.dimension))
    assert np.max(np.abs(S.inverse(S.forward(z)) - z)) < 1e-8


def test_empirical_gaussian_persistence(mnist_pairs):
    model = datasets.fit_empirical_gaussian(mnist_pairs, ridge=1e-3)
    back = datasets.EmpiricalGaussian.from_dict(model.to_dict())
    assert np.array_equal(back.covariance, model.covariance) and back.blocks()[2].shape == (98, 98)


def test_mnist_pixels_are_in_range(mnist_batch):
    assert mnist_batch.height == 28 and mnist_batch.width == 28
    assert mnist_batch.pixels.min() >= 0 and mnist_batch.pixels.max() <= 1


def test_pgm_round_trip(tmp_path):
    img = np.array([[0.0, 32 / 255], [9 / 255, 1.0], [10 / 255, 13 / 255]])
    datasets.write_pgm(tmp_path / "x.pgm", img)
    raw = (tmp_path / "x.pgm").read_bytes()
    assert raw.startswith(b"P5\n2 3\n255\n")
    np.testing.assert_allclose(datasets.read_pgm(tmp_path / "x.pgm"), img)


def test_images_csv(tmp_path):
    datasets.write_images_csv(tmp_path / "im.csv", np.array([[0.25, 0.5]]))
    lines = (tmp_path / "im.csv").read_text().splitlines()
    assert lines[0] == "pixel_0,pixel_1" and len(lines) == 2
