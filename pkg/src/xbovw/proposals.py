"""Selective search region proposals for grayscale images.

An oversegmentation seeds a greedy agglomeration: the most similar pair of
neighboring regions merges first, the merged region's bounding box is
recorded, and similarities against its neighbors are recomputed. The
recorded boxes at every level of the hierarchy are the object proposals.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .boxes import BoundingBox
from .errors import DataError
from .image import gaussian_blur
from .segmentation import Segmentation, felzenszwalb_segment

ALL_SIMILARITY_TERMS = frozenset({"color", "texture", "size", "fill"})

_N_INTENSITY_BINS = 25
_N_TEXTURE_ORIENT = 8
_N_TEXTURE_BINS = 10
# Directional-derivative responses of a [0, 1] image rarely exceed this
# after sigma-1 smoothing (a unit step peaks near 0.4); larger values
# share the top bin.
_TEXTURE_CLIP = 0.5


@dataclass
class Region:
    id: int
    pixel_count: int
    bbox: BoundingBox
    intensity_hist: np.ndarray  # (25,) L1-normalized
    texture_hist: np.ndarray  # (80,) L1-normalized


class MergeRecord(NamedTuple):
    a: int
    b: int
    merged: int
    similarity: float
    bbox: BoundingBox


class SelectiveSearchTrace(NamedTuple):
    initial_regions: list[Region]
    merges: list[MergeRecord]


def region_stats(img: np.ndarray, seg: Segmentation) -> list[Region]:
    """Per-component tight bbox plus intensity and texture histograms.

    Texture is the magnitude of Gaussian-smoothed (sigma 1) directional
    derivatives at 8 orientations over half a turn, 10 bins each.
    """
    img = np.asarray(img, dtype=np.float64)
    labels = seg.labels
    if img.shape != labels.shape:
        raise ValueError(f"image {img.shape} != segmentation {labels.shape}")
    n = seg.num_components
    flat_labels = labels.ravel()
    pixel_counts = np.bincount(flat_labels, minlength=n)

    slices = ndimage.find_objects(labels + 1)
    bboxes = []
    for sl in slices:
        ys, xs = sl
        bboxes.append(BoundingBox(xs.start, ys.start, xs.stop - 1, ys.stop - 1))

    intensity_bin = np.minimum(
        (img * _N_INTENSITY_BINS).astype(np.intp), _N_INTENSITY_BINS - 1
    )
    flat = flat_labels * _N_INTENSITY_BINS + intensity_bin.ravel()
    intensity = np.bincount(flat, minlength=n * _N_INTENSITY_BINS).reshape(
        n, _N_INTENSITY_BINS
    )

    smoothed = gaussian_blur(img, 1.0)
    gy, gx = np.gradient(smoothed)
    texture = np.zeros((n, _N_TEXTURE_ORIENT * _N_TEXTURE_BINS), dtype=np.int64)
    bin_width = _TEXTURE_CLIP / _N_TEXTURE_BINS
    for k in range(_N_TEXTURE_ORIENT):
        theta = k * np.pi / _N_TEXTURE_ORIENT
        response = np.abs(np.cos(theta) * gx + np.sin(theta) * gy)
        t_bin = np.minimum(
            (response / bin_width).astype(np.intp), _N_TEXTURE_BINS - 1
        )
        flat = flat_labels * _N_TEXTURE_BINS + t_bin.ravel()
        texture[:, k * _N_TEXTURE_BINS : (k + 1) * _N_TEXTURE_BINS] = np.bincount(
            flat, minlength=n * _N_TEXTURE_BINS
        ).reshape(n, _N_TEXTURE_BINS)

    counts = pixel_counts.astype(np.float64)
    intensity_hist = intensity / counts[:, None]
    texture_hist = texture / (counts * _N_TEXTURE_ORIENT)[:, None]
    return [
        Region(
            id=i,
            pixel_count=int(pixel_counts[i]),
            bbox=bboxes[i],
            intensity_hist=intensity_hist[i],
            texture_hist=texture_hist[i],
        )
        for i in range(n)
    ]


def similarity(
    a: Region,
    b: Region,
    image_area: int,
    strategy: frozenset[str] | set[str] = ALL_SIMILARITY_TERMS,
) -> float:
    """Sum of the enabled similarity terms, each in [0, 1]."""
    if not strategy:
        raise ValueError("strategy must enable at least one term")
    unknown = set(strategy) - ALL_SIMILARITY_TERMS
    if unknown:
        raise ValueError(f"unknown similarity terms {sorted(unknown)}")
    if a.pixel_count == 0 or b.pixel_count == 0:
        raise ValueError("similarity of an empty region is undefined")
    total = 0.0
    if "color" in strategy:
        total += float(np.minimum(a.intensity_hist, b.intensity_hist).sum())
    if "texture" in strategy:
        total += float(np.minimum(a.texture_hist, b.texture_hist).sum())
    if "size" in strategy:
        total += 1.0 - (a.pixel_count + b.pixel_count) / image_area
    if "fill" in strategy:
        enclosing = a.bbox.enclose(b.bbox).area
        total += 1.0 - (enclosing - a.pixel_count - b.pixel_count) / image_area
    return total


def _neighbor_pairs(labels: np.ndarray) -> set[tuple[int, int]]:
    """Pairs of region ids sharing an 8-adjacent pixel pair."""
    pairs: set[tuple[int, int]] = set()
    shifts = ((0, 1), (1, 0), (1, 1), (1, -1))
    h, w = labels.shape
    for dy, dx in shifts:
        rows_a = slice(0, h - dy)
        rows_b = slice(dy, h)
        if dx >= 0:
            cols_a = slice(0, w - dx)
            cols_b = slice(dx, w)
        else:
            cols_a = slice(-dx, w)
            cols_b = slice(0, w + dx)
        a = labels[rows_a, cols_a]
        b = labels[rows_b, cols_b]
        diff = a != b
        lo = np.minimum(a[diff], b[diff])
        hi = np.maximum(a[diff], b[diff])
        if lo.size:
            stacked = np.unique(np.stack([lo, hi], axis=1), axis=0)
            pairs.update((int(p), int(q)) for p, q in stacked)
    return pairs


def _merge_regions(a: Region, b: Region, new_id: int) -> Region:
    total = a.pixel_count + b.pixel_count
    weight_a = a.pixel_count / total
    weight_b = b.pixel_count / total
    return Region(
        id=new_id,
        pixel_count=total,
        bbox=a.bbox.enclose(b.bbox),
        intensity_hist=weight_a * a.intensity_hist + weight_b * b.intensity_hist,
        texture_hist=weight_a * a.texture_hist + weight_b * b.texture_hist,
    )


def selective_search(
    img: np.ndarray,
    k: float = 100.0,
    sigma: float = 0.8,
    min_size: int = 50,
    strategy: frozenset[str] | set[str] = ALL_SIMILARITY_TERMS,
    return_trace: bool = False,
) -> list[BoundingBox] | tuple[list[BoundingBox], SelectiveSearchTrace]:
    """Object proposals: initial region boxes plus every merge-level box.

    The most similar neighboring pair merges first; similarity ties pick
    the lexicographically lowest (id, id) pair. Output boxes are
    deduplicated exact-coordinate, keeping first occurrence, in recording
    order (initial regions by id, then merges chronologically).
    """
    img = np.asarray(img, dtype=np.float64)
    seg = felzenszwalb_segment(img, k=k, sigma=sigma, min_size=min_size)
    regions = {r.id: r for r in region_stats(img, seg)}
    initial = [regions[i] for i in sorted(regions)]
    image_area = int(img.size)

    neighbors: dict[int, set[int]] = {i: set() for i in regions}
    sims: dict[tuple[int, int], float] = {}
    for i, j in _neighbor_pairs(seg.labels):
        neighbors[i].add(j)
        neighbors[j].add(i)
        sims[(i, j)] = similarity(regions[i], regions[j], image_area, strategy)

    merges: list[MergeRecord] = []
    next_id = seg.num_components
    while len(regions) > 1:
        (best_i, best_j) = min(sims, key=lambda p: (-sims[p], p))
        best_sim = sims[(best_i, best_j)]
        merged = _merge_regions(regions[best_i], regions[best_j], next_id)
        merged_neighbors = (neighbors[best_i] | neighbors[best_j]) - {best_i, best_j}
        for old in (best_i, best_j):
            for t in neighbors[old]:
                sims.pop((min(old, t), max(old, t)), None)
                neighbors[t].discard(old)
            del neighbors[old]
            del regions[old]
        regions[merged.id] = merged
        neighbors[merged.id] = merged_neighbors
        for t in merged_neighbors:
            neighbors[t].add(merged.id)
            sims[(t, merged.id)] = similarity(
                regions[t], merged, image_area, strategy
            )
        merges.append(
            MergeRecord(best_i, best_j, merged.id, float(best_sim), merged.bbox)
        )
        next_id += 1

    boxes: list[BoundingBox] = []
    seen: set[tuple[int, int, int, int]] = set()
    for box in [r.bbox for r in initial] + [m.bbox for m in merges]:
        key = box.as_tuple()
        if key not in seen:
            seen.add(key)
            boxes.append(box)
    if return_trace:
        return boxes, SelectiveSearchTrace(initial, merges)
    return boxes


def write_proposals_csv(path: str | os.PathLike, boxes: list[BoundingBox]) -> None:
    """One `x_min,y_min,x_max,y_max` line per box, in order."""
    with open(path, "w", encoding="utf-8") as handle:
        for box in boxes:
            handle.write(f"{box.x_min},{box.y_min},{box.x_max},{box.y_max}\n")


def read_proposals_csv(path: str | os.PathLike) -> list[BoundingBox]:
    boxes = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise DataError(f"{path}:{line_no}: expected 4 comma-separated values")
            try:
                x0, y0, x1, y1 = (int(p) for p in parts)
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: non-integer coordinate") from exc
            boxes.append(BoundingBox(x0, y0, x1, y1))
    return boxes
