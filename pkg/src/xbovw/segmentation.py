"""Graph-based image segmentation (Felzenszwalb-Huttenlocher).

Pixels are nodes of an 8-connected grid graph with absolute intensity
difference as edge weight. Edges are processed in sorted order and two
components merge when the connecting weight does not exceed the internal
variation of either side plus its size-scaled tolerance k / |C|. A final
pass merges components below min_size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import gaussian_blur


@dataclass
class Segmentation:
    labels: np.ndarray  # (H, W) int32, labels 0..num_components-1
    num_components: int


class _UnionFind:
    __slots__ = ("parent", "size", "tolerance")

    def __init__(self, n: int, k: float) -> None:
        self.parent = list(range(n))
        self.size = [1] * n
        self.tolerance = [k] * n  # Int(C) + k / |C|, starts at k for singletons

    def find(self, a: int) -> int:
        parent = self.parent
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(self, ra: int, rb: int) -> int:
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return ra


def _grid_edges(img: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """8-connected edges (a, b, weight) with a < b as flat pixel indices."""
    h, w = img.shape
    idx = np.arange(h * w, dtype=np.int64).reshape(h, w)
    pairs_a = []
    pairs_b = []
    weights = []

    def emit(a_sl: tuple[slice, slice], b_sl: tuple[slice, slice]) -> None:
        a = idx[a_sl].ravel()
        b = idx[b_sl].ravel()
        pairs_a.append(a)
        pairs_b.append(b)
        weights.append(np.abs(img[a_sl] - img[b_sl]).ravel())

    if w > 1:
        emit((slice(None), slice(0, w - 1)), (slice(None), slice(1, w)))  # right
    if h > 1:
        emit((slice(0, h - 1), slice(None)), (slice(1, h), slice(None)))  # down
    if h > 1 and w > 1:
        emit((slice(0, h - 1), slice(0, w - 1)), (slice(1, h), slice(1, w)))  # down-right
        emit((slice(0, h - 1), slice(1, w)), (slice(1, h), slice(0, w - 1)))  # down-left
    if not pairs_a:
        return (
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.float64),
        )
    a = np.concatenate(pairs_a)
    b = np.concatenate(pairs_b)
    wgt = np.concatenate(weights)
    swap = b < a
    a[swap], b[swap] = b[swap], a[swap]
    return a, b, wgt


def felzenszwalb_segment(
    img: np.ndarray,
    k: float = 100.0,
    sigma: float = 0.8,
    min_size: int = 50,
) -> Segmentation:
    """Segment a [0, 1] grayscale image.

    Ties are broken deterministically by (weight, smaller pixel index,
    neighbor pixel index). Output labels are renumbered by first
    occurrence in row-major order. min_size is enforced by a post-pass
    that merges small components across their lowest-weight edges.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("expected a non-empty (H, W) array")
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if min_size < 1:
        raise ValueError(f"min_size must be >= 1, got {min_size}")
    work = gaussian_blur(img, sigma) if sigma > 0 else img
    h, w = work.shape
    a, b, wgt = _grid_edges(work)
    order = np.lexsort((b, a, wgt))
    a_list = a[order].tolist()
    b_list = b[order].tolist()
    w_list = wgt[order].tolist()

    uf = _UnionFind(h * w, k)
    find = uf.find
    tolerance = uf.tolerance
    size = uf.size
    for ea, eb, ew in zip(a_list, b_list, w_list):
        ra = find(ea)
        rb = find(eb)
        if ra == rb:
            continue
        if ew <= tolerance[ra] and ew <= tolerance[rb]:
            root = uf.union(ra, rb)
            tolerance[root] = ew + k / size[root]

    if min_size > 1:
        for ea, eb, _ in zip(a_list, b_list, w_list):
            ra = find(ea)
            rb = find(eb)
            if ra != rb and (size[ra] < min_size or size[rb] < min_size):
                uf.union(ra, rb)

    roots = np.fromiter((find(i) for i in range(h * w)), dtype=np.int64, count=h * w)
    _, first_index, inverse = np.unique(roots, return_index=True, return_inverse=True)
    # renumber by first occurrence in row-major order
    remap = np.empty(first_index.size, dtype=np.int64)
    remap[np.argsort(first_index, kind="stable")] = np.arange(first_index.size)
    labels = remap[inverse]
    return Segmentation(
        labels.reshape(h, w).astype(np.int32), int(first_index.size)
    )
