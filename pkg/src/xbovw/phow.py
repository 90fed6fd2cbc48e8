"""Dense multi-scale upright SIFT descriptors on a regular grid.

Keypoints are sampled every `step` pixels at several bin sizes (scales).
Each descriptor covers a square support of half-width 2 * bin_size centered
on the keypoint, split into 4x4 spatial bins of 8 orientation bins each.
No dominant-orientation rotation is applied: dense extraction keeps all
descriptors upright.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DataError
from .image import gaussian_blur

_TWO_PI = 2.0 * np.pi
_N_ORIENT = 8
_CACHE_MAGIC = b"XBWF"


@dataclass(frozen=True)
class PhowParams:
    step: int = 4
    scales: tuple[int, ...] = (4, 6, 8, 10)
    magnif: float = 6.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))
        if self.step < 1:
            raise ValueError(f"step must be >= 1, got {self.step}")
        if not self.scales:
            raise ValueError("scales must be non-empty")
        if any(b <= 0 for b in self.scales):
            raise ValueError(f"scales must be positive, got {self.scales}")
        if any(b >= a for b, a in zip(self.scales, self.scales[1:])):
            raise ValueError(f"scales must be strictly increasing, got {self.scales}")
        if self.magnif <= 0:
            raise ValueError(f"magnif must be positive, got {self.magnif}")


@dataclass(frozen=True)
class Keypoint:
    x: int
    y: int
    bin_size: int


class PhowFeatures(NamedTuple):
    """descriptors: (N, 128) float64; keypoints: (N, 3) int32 columns x, y, bin_size."""

    descriptors: np.ndarray
    keypoints: np.ndarray


def _grid_axis(size: int, bin_size: int, step: int) -> np.ndarray:
    # Margin of 2 * bin_size keeps the full support window inside the image.
    margin = 2 * bin_size
    last = size - 1 - margin
    if last < margin:
        return np.empty(0, dtype=np.intp)
    return np.arange(margin, last + 1, step, dtype=np.intp)


def dense_grid(
    width: int,
    height: int,
    mask: np.ndarray | None,
    params: PhowParams = PhowParams(),
) -> list[Keypoint]:
    """Grid keypoints for every scale, scale-major then row-major.

    Coordinates run from the per-scale margin in steps of params.step, so
    x, y are congruent to the margin mod step. A mask keeps only keypoints
    whose center pixel is true. Images too small for a scale contribute no
    keypoints at that scale.
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"dimensions must be positive, got {width}x{height}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (height, width):
            raise ValueError(f"mask shape {mask.shape} != image {(height, width)}")
    out: list[Keypoint] = []
    for bin_size in params.scales:
        xs = _grid_axis(width, bin_size, params.step)
        ys = _grid_axis(height, bin_size, params.step)
        for y in ys:
            row = mask[y, xs] if mask is not None else None
            for i, x in enumerate(xs):
                if row is None or row[i]:
                    out.append(Keypoint(int(x), int(y), bin_size))
    return out


def _orientation_planes(img: np.ndarray, bin_size: int, magnif: float) -> np.ndarray:
    """(8, H, W) gradient-magnitude planes, linearly split across orientation bins."""
    smoothed = gaussian_blur(img, bin_size / magnif)
    gy, gx = np.gradient(smoothed)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), _TWO_PI)
    t = ang * (_N_ORIENT / _TWO_PI)
    lower = np.floor(t).astype(np.intp) % _N_ORIENT
    frac = t - np.floor(t)
    planes = np.zeros((_N_ORIENT,) + img.shape, dtype=np.float64)
    upper = (lower + 1) % _N_ORIENT
    lo_mass = mag * (1.0 - frac)
    hi_mass = mag * frac
    for k in range(_N_ORIENT):
        planes[k] += np.where(lower == k, lo_mass, 0.0)
        planes[k] += np.where(upper == k, hi_mass, 0.0)
    return planes


def _spatial_weights(bin_size: int) -> np.ndarray:
    """(16, S, S) bilinear weights of the 4x4 spatial bins over the support."""
    offsets = np.arange(-2 * bin_size, 2 * bin_size + 1, dtype=np.float64)
    centers = (np.arange(4, dtype=np.float64) - 1.5) * bin_size
    # triangle of half-width bin_size around each bin center
    w = np.maximum(0.0, 1.0 - np.abs(offsets[None, :] - centers[:, None]) / bin_size)
    grid = np.einsum("iu,jv->ijuv", w, w)
    side = offsets.size
    return grid.reshape(16, side, side)


def _normalize_rows(desc: np.ndarray) -> np.ndarray:
    """L2 normalize, clamp at 0.2, renormalize; zero rows stay zero."""
    norm = np.linalg.norm(desc, axis=1)
    nz = norm > 1e-12
    desc[nz] /= norm[nz, None]
    np.minimum(desc, 0.2, out=desc)
    norm = np.linalg.norm(desc, axis=1)
    nz = norm > 1e-12
    desc[nz] /= norm[nz, None]
    return desc


def _descriptors_at(
    planes: np.ndarray, xs: np.ndarray, ys: np.ndarray, bin_size: int
) -> np.ndarray:
    """Descriptors at (xs[i], ys[i]) from precomputed orientation planes."""
    weights = _spatial_weights(bin_size)
    side = weights.shape[1]
    offsets = np.arange(-2 * bin_size, 2 * bin_size + 1, dtype=np.intp)
    n = xs.size
    out = np.empty((n, 128), dtype=np.float64)
    chunk = max(1, 4_000_000 // (side * side * _N_ORIENT))
    for start in range(0, n, chunk):
        sel = slice(start, min(start + chunk, n))
        py = ys[sel][:, None] + offsets[None, :]
        px = xs[sel][:, None] + offsets[None, :]
        patch = planes[:, py[:, :, None], px[:, None, :]]  # (8, C, S, S)
        desc = np.einsum("byx,ocyx->cbo", weights, patch)  # (C, 16, 8)
        out[sel] = desc.reshape(-1, 128)
    return _normalize_rows(out)


def sift_descriptor(img: np.ndarray, kp: Keypoint, magnif: float = 6.0) -> np.ndarray:
    """Single upright SIFT descriptor at a keypoint.

    The image is pre-smoothed with sigma = bin_size / magnif, gradients are
    central differences, and the 128 values are ordered y-bin major, then
    x-bin, then orientation.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    r = 2 * kp.bin_size
    if not (r <= kp.x <= w - 1 - r and r <= kp.y <= h - 1 - r):
        raise ValueError(f"descriptor support outside image for {kp}")
    planes = _orientation_planes(img, kp.bin_size, magnif)
    xs = np.array([kp.x], dtype=np.intp)
    ys = np.array([kp.y], dtype=np.intp)
    return _descriptors_at(planes, xs, ys, kp.bin_size)[0]


def phow_extract(
    img: np.ndarray,
    mask: np.ndarray | None = None,
    params: PhowParams = PhowParams(),
) -> PhowFeatures:
    """Dense descriptors over the grid of every scale.

    Output order matches dense_grid: scale-major, then row-major within a
    scale. Masked extraction keeps keypoints whose center pixel is true.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("expected a non-empty (H, W) array")
    h, w = img.shape
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != img.shape:
            raise ValueError(f"mask shape {mask.shape} != image {img.shape}")
    desc_parts: list[np.ndarray] = []
    kp_parts: list[np.ndarray] = []
    for bin_size in params.scales:
        gx = _grid_axis(w, bin_size, params.step)
        gy = _grid_axis(h, bin_size, params.step)
        if gx.size == 0 or gy.size == 0:
            continue
        yy, xx = np.meshgrid(gy, gx, indexing="ij")
        xs = xx.ravel()
        ys = yy.ravel()
        if mask is not None:
            keep = mask[ys, xs]
            xs = xs[keep]
            ys = ys[keep]
        if xs.size == 0:
            continue
        planes = _orientation_planes(img, bin_size, params.magnif)
        desc_parts.append(_descriptors_at(planes, xs, ys, bin_size))
        kps = np.empty((xs.size, 3), dtype=np.int32)
        kps[:, 0] = xs
        kps[:, 1] = ys
        kps[:, 2] = bin_size
        kp_parts.append(kps)
    if not desc_parts:
        return PhowFeatures(
            np.empty((0, 128), dtype=np.float64), np.empty((0, 3), dtype=np.int32)
        )
    return PhowFeatures(np.vstack(desc_parts), np.vstack(kp_parts))


def save_descriptors(path: str | os.PathLike, descriptors: np.ndarray) -> None:
    """Cache descriptors as magic + count + dim header and float32 rows."""
    descriptors = np.ascontiguousarray(descriptors, dtype=np.float64)
    if descriptors.ndim != 2:
        raise ValueError("expected a (N, dim) array")
    count, dim = descriptors.shape
    with open(path, "wb") as handle:
        handle.write(_CACHE_MAGIC)
        handle.write(struct.pack("<II", count, dim))
        handle.write(descriptors.astype("<f4").tobytes())


def load_descriptors(path: str | os.PathLike) -> np.ndarray:
    """Read a descriptor cache back as float64."""
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:4] != _CACHE_MAGIC:
        raise DataError(f"not a descriptor cache: {path}")
    try:
        count, dim = struct.unpack_from("<II", blob, 4)
    except struct.error as exc:
        raise DataError(f"truncated descriptor cache: {path}") from exc
    expected = 12 + 4 * count * dim
    if len(blob) != expected:
        raise DataError(f"truncated descriptor cache: {path}")
    rows = np.frombuffer(blob, dtype="<f4", offset=12, count=count * dim)
    return rows.reshape(count, dim).astype(np.float64)
