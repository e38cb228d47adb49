import numpy as np
import pytest

from stealthpatch.defenses import (DEFAULT_SWEEP, defense_fn, effective_kernel, gaussian_noise,
                                   jpeg_compress, median_blur)
from stealthpatch.errors import CodecError
from stealthpatch.synthetic import natural_image


@pytest.fixture(scope="module")
def photo():
    return natural_image()


def test_jpeg_high_quality_round_trip(photo):
    out = jpeg_compress(photo, 100)
    assert out.shape == photo.shape
    assert np.abs(out - photo).max() < 0.05


def test_jpeg_degrades_with_quality(photo):
    err = [np.abs(jpeg_compress(photo, q) - photo).mean() for q in (90, 70, 50, 30)]
    assert err[-1] > err[0]
    assert jpeg_compress(photo, 50).dtype == np.float32


def test_jpeg_is_deterministic(photo):
    assert np.array_equal(jpeg_compress(photo, 70), jpeg_compress(photo, 70))


def test_jpeg_rejects_bad_quality(photo):
    with pytest.raises(CodecError):
        jpeg_compress(photo, 0)


def test_median_constant_and_identity(photo):
    const = np.full((20, 20, 3), 0.3, np.float32)
    assert np.array_equal(median_blur(const, 5), const)
    assert np.array_equal(median_blur(photo, 1), photo)


def test_median_removes_single_bright_pixel():
    img = np.full((9, 9, 3), 0.1, np.float32)
    img[4, 4] = 1.0
    out = median_blur(img, 5)
    assert np.all(out[4, 4] == np.float32(0.1))


def test_even_kernel_rounds_up():
    assert [effective_kernel(k) for k in (5, 10, 15, 20)] == [5, 11, 15, 21]
    rng = np.random.default_rng(0)
    img = rng.uniform(size=(30, 30, 3)).astype(np.float32)
    assert np.array_equal(median_blur(img, 10), median_blur(img, 11))


def test_noise_identity_and_statistics():
    img = np.full((1000, 1000), 0.5, np.float32)
    assert np.array_equal(gaussian_noise(img, 0.0), img)
    diff = gaussian_noise(img, 0.05, rng=0).astype(np.float64) - 0.5
    assert diff.std() == pytest.approx(0.05, abs=0.001)


def test_noise_is_seeded(photo):
    assert np.array_equal(gaussian_noise(photo, 0.1, 3), gaussian_noise(photo, 0.1, 3))
    assert not np.array_equal(gaussian_noise(photo, 0.1, 3), gaussian_noise(photo, 0.1, 4))


@pytest.mark.parametrize("name", sorted(DEFAULT_SWEEP))
def test_defenses_preserve_shape_and_range(photo, name):
    for param in DEFAULT_SWEEP[name]:
        out = defense_fn(name, param, seed=1)(photo)
        assert out.shape == photo.shape and out.min() >= 0 and out.max() <= 1


def test_unknown_defense():
    with pytest.raises(ValueError):
        defense_fn("blur", 3)
