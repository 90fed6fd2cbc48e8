import numpy as np
import pytest
from PIL import Image

from xbovw.errors import DataError
from xbovw.image import (
    default_min_area,
    gaussian_blur,
    gaussian_kernel1d,
    load_grayscale,
    reject_small_regions,
    resize_max_side,
    save_grayscale,
    threshold_mask,
)


def test_load_grayscale_range_and_dtype(tmp_path):
    rng = np.random.RandomState(0)
    raw = rng.randint(0, 256, size=(17, 23), dtype=np.uint8)
    path = tmp_path / "plain.png"
    Image.fromarray(raw, mode="L").save(path)
    img = load_grayscale(path)
    assert img.dtype == np.float64
    assert img.shape == (17, 23)
    assert np.array_equal(img, raw / 255.0)


def test_load_grayscale_rgb_uses_luma_weights(tmp_path):
    rgb = np.zeros((4, 4, 3), dtype=np.uint8)
    rgb[..., 0] = 200
    rgb[..., 1] = 100
    rgb[..., 2] = 50
    path = tmp_path / "color.png"
    Image.fromarray(rgb, mode="RGB").save(path)
    img = load_grayscale(path)
    expected = int(200 * 0.299 + 100 * 0.587 + 50 * 0.114) / 255.0
    assert np.allclose(img, expected, atol=1.5 / 255.0)


def test_load_grayscale_rejects_garbage(tmp_path):
    path = tmp_path / "bogus.png"
    path.write_bytes(b"not a raster at all")
    with pytest.raises(DataError):
        load_grayscale(path)
    with pytest.raises(DataError):
        load_grayscale(tmp_path / "missing.png")


@pytest.mark.parametrize("suffix", ["png", "pgm"])
def test_save_load_roundtrip(tmp_path, suffix):
    rng = np.random.RandomState(3)
    img = rng.rand(12, 9)
    path = tmp_path / f"round.{suffix}"
    save_grayscale(path, img)
    back = load_grayscale(path)
    assert back.shape == img.shape
    # quantization to 256 levels is the only loss
    assert np.max(np.abs(back - img)) <= 0.5 / 255.0 + 1e-12


def test_pgm_header_is_binary_p5(tmp_path):
    path = tmp_path / "plain.pgm"
    save_grayscale(path, np.zeros((2, 3)))
    blob = path.read_bytes()
    assert blob.startswith(b"P5\n3 2\n255\n")
    assert len(blob) == len(b"P5\n3 2\n255\n") + 6


def test_gaussian_kernel_shape_and_sum():
    for sigma in (0.4, 1.0, 2.5):
        kernel = gaussian_kernel1d(sigma)
        radius = int(np.ceil(4.0 * sigma))
        assert kernel.size == 2 * radius + 1
        assert abs(kernel.sum() - 1.0) < 1e-12
        assert np.array_equal(kernel, kernel[::-1])
    with pytest.raises(ValueError):
        gaussian_kernel1d(0.0)


def test_gaussian_blur_matches_direct_convolution():
    """Separable pass equals a brute-force 2-D convolution with edge clamp."""
    rng = np.random.RandomState(5)
    img = rng.rand(14, 11)
    sigma = 0.9
    kernel = gaussian_kernel1d(sigma)
    radius = kernel.size // 2
    kernel2d = np.outer(kernel, kernel)
    padded = np.pad(img, radius, mode="edge")
    expected = np.empty_like(img)
    for y in range(img.shape[0]):
        for x in range(img.shape[1]):
            window = padded[y : y + kernel.size, x : x + kernel.size]
            expected[y, x] = np.sum(window * kernel2d)
    assert np.allclose(gaussian_blur(img, sigma), expected, atol=1e-12)


def test_gaussian_blur_preserves_constants():
    img = np.full((9, 9), 0.37)
    assert np.allclose(gaussian_blur(img, 2.0), img, atol=1e-12)


def test_threshold_mask_is_strict():
    img = np.array([[0.30, 0.31, 0.32]])
    mask = threshold_mask(img, 0.31)
    assert mask.tolist() == [[True, False, False]]


def test_default_min_area_formula():
    assert default_min_area((100, 50)) == 5.0
    assert default_min_area((2688, 2208)) == 2208 * 2688 / 1000.0


def test_reject_small_regions_cutoff_inclusive():
    mask = np.zeros((10, 10), dtype=bool)
    mask[0:2, 0:2] = True  # area 4
    mask[5:8, 5:8] = True  # area 9
    out = reject_small_regions(mask, min_area=4)
    assert out[0:2, 0:2].all() and out[5:8, 5:8].all()
    out = reject_small_regions(mask, min_area=5)
    assert not out[0:2, 0:2].any() and out[5:8, 5:8].all()


def test_reject_small_regions_eight_connectivity():
    # two diagonal pixels form one 8-connected component of area 2
    mask = np.zeros((4, 4), dtype=bool)
    mask[1, 1] = mask[2, 2] = True
    out = reject_small_regions(mask, min_area=2)
    assert out.sum() == 2


def test_reject_small_regions_default_cutoff():
    mask = np.zeros((100, 100), dtype=bool)
    mask[0, :9] = True  # area 9 < 10
    mask[50:52, 50:55] = True  # area 10 survives
    out = reject_small_regions(mask)
    assert out.sum() == 10


def test_resize_max_side():
    img = np.zeros((40, 80))
    out = resize_max_side(img, 40)
    assert out.shape == (20, 40)
    assert resize_max_side(img, 0) is img
    assert resize_max_side(img, 100) is img
    tall = resize_max_side(np.zeros((80, 40)), 20)
    assert tall.shape == (20, 10)
