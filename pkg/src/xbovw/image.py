"""Grayscale image I/O and the metal-candidate preprocessing steps.

Images are float64 arrays of shape (H, W) with values in [0, 1]. Dark pixels
are metal candidates: X-ray attenuation makes dense objects absorb more and
appear darker than the organic background.
"""

from __future__ import annotations

import math
import os

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import DataError

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def load_grayscale(path: str | os.PathLike) -> np.ndarray:
    """Load an 8-bit grayscale PNG or PGM as float64 in [0, 1].

    Color inputs are converted to luminance with Rec. 601 weights
    (0.299, 0.587, 0.114), the convention Pillow's "L" mode uses.

    Raises
    ------
    DataError
        If the file is missing, unreadable, or not a raster image.
    """
    try:
        with Image.open(path) as handle:
            if handle.mode != "L":
                handle = handle.convert("L")
            raw = np.asarray(handle, dtype=np.uint8)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    if raw.ndim != 2 or raw.size == 0:
        raise DataError(f"cannot read image {path}: empty or non-2D raster")
    return raw.astype(np.float64) / 255.0


def save_grayscale(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write a [0, 1] float image as 8-bit PNG or PGM (by extension).

    Values are clipped then rounded to the nearest of 256 levels, so
    save followed by load is identity up to that quantization.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("expected a non-empty (H, W) array")
    quantized = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    suffix = os.fspath(path).lower()
    if suffix.endswith(".pgm"):
        h, w = quantized.shape
        with open(path, "wb") as handle:
            handle.write(b"P5\n%d %d\n255\n" % (w, h))
            handle.write(quantized.tobytes())
    else:
        Image.fromarray(quantized, mode="L").save(path)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Unit-sum 1-D Gaussian kernel with radius ceil(4 * sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing with replicated edges."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("expected a (H, W) array")
    kernel = gaussian_kernel1d(sigma)
    out = ndimage.correlate1d(img, kernel, axis=0, mode="nearest")
    return ndimage.correlate1d(out, kernel, axis=1, mode="nearest")


def threshold_mask(img: np.ndarray, threshold: float = 0.31) -> np.ndarray:
    """Boolean mask of metal candidates: pixels strictly darker than threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    img = np.asarray(img, dtype=np.float64)
    return img < threshold

def default_min_area(shape: tuple[int, int]) -> float:
    """Default small-region cutoff: one thousandth of the image area."""
    h, w = shape
    return (w * h) / 1000.0


def reject_small_regions(mask: np.ndarray, min_area: float | None = None) -> np.ndarray:
    """Clear 8-connected mask components whose pixel count is below min_area.

    Components with area exactly min_area survive. min_area defaults to
    one thousandth of the image area.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError("expected a (H, W) boolean mask")
    if min_area is None:
        min_area = default_min_area(mask.shape)
    if min_area < 0:
        raise ValueError(f"min_area must be non-negative, got {min_area}")
    labels, count = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    if count == 0:
        return mask.copy()
    areas = np.bincount(labels.ravel())
    areas[0] = 0  # background label never survives
    keep = areas >= min_area
    return keep[labels]


def resize_max_side(img: np.ndarray, max_side: int) -> np.ndarray:
    """Bilinear-downscale so the longer side is at most max_side.

    max_side <= 0 disables resizing. Images already small enough are
    returned unchanged (same array, not a copy).
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("expected a non-empty (H, W) array")
    if max_side <= 0:
        return img
    h, w = img.shape
    longer = max(h, w)
    if longer <= max_side:
        return img
    scale = max_side / float(longer)
    new_w = max(1, int(round(w * scale)))
    new_h = max(1, int(round(h * scale)))
    resized = Image.fromarray(img.astype(np.float32), mode="F").resize(
        (new_w, new_h), resample=Image.BILINEAR
    )
    return np.clip(np.asarray(resized, dtype=np.float64), 0.0, 1.0)
