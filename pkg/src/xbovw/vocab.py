"""Visual vocabulary: k-means over metallic SIFT descriptors.

The vocabulary is built off-line from descriptors extracted inside the
metal-candidate mask. Lloyd iterations start from k-means++ seeds and the
whole procedure is restarted several times, keeping the lowest-cost run.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

_VOCAB_MAGIC = b"XBWV"
_VOCAB_VERSION = 1


@dataclass(eq=False)
class Vocabulary:
    centroids: np.ndarray  # (V, dim) float64
    training_cost: float
    cost_history: tuple[float, ...] = field(default=(), repr=False)
    meta: dict | None = field(default=None, repr=False)
    file_sha256: str | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.centroids.shape[1])


def _squared_distances(data: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(N, V) squared Euclidean distances, expanded-form matmul."""
    d2 = (
        np.sum(data * data, axis=1)[:, None]
        - 2.0 * (data @ centroids.T)
        + np.sum(centroids * centroids, axis=1)[None, :]
    )
    return np.maximum(d2, 0.0, out=d2)


def _plusplus_seeds(data: np.ndarray, k: int, rng: np.random.RandomState) -> np.ndarray:
    n = data.shape[0]
    chosen = np.empty(k, dtype=np.intp)
    chosen[0] = rng.randint(n)
    best = np.sum((data - data[chosen[0]]) ** 2, axis=1)
    for j in range(1, k):
        total = best.sum()
        if total <= 0.0:
            # all remaining mass on already-chosen points: fall back to uniform
            chosen[j] = rng.randint(n)
        else:
            chosen[j] = rng.choice(n, p=best / total)
        best = np.minimum(best, np.sum((data - data[chosen[j]]) ** 2, axis=1))
    return data[chosen].copy()


def kmeans(
    data: np.ndarray,
    k: int,
    seed: int,
    max_iter: int = 200,
) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    """Lloyd k-means with k-means++ initialization.

    Returns (centroids, assignments, cost, cost_history) where cost is the
    sum of squared distances to the nearest centroid under the returned
    centroids, and cost_history holds the cost after each assignment step.
    Empty clusters are re-seeded to the point currently farthest from its
    assigned centroid. Stops when assignments no longer change.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("expected a non-empty (N, dim) array")
    n = data.shape[0]
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    rng = np.random.RandomState(seed)
    centroids = _plusplus_seeds(data, k, rng)
    assignments = np.full(n, -1, dtype=np.intp)
    history: list[float] = []
    for _ in range(max_iter):
        d2 = _squared_distances(data, centroids)
        new_assign = np.argmin(d2, axis=1)
        point_d2 = d2[np.arange(n), new_assign]
        counts = np.bincount(new_assign, minlength=k)
        for j in np.flatnonzero(counts == 0):
            far = int(np.argmax(point_d2))
            centroids[j] = data[far]
            new_assign[far] = j
            point_d2[far] = 0.0
            counts = np.bincount(new_assign, minlength=k)
        history.append(float(point_d2.sum()))
        if np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
        sums = np.zeros_like(centroids)
        np.add.at(sums, assignments, data)
        centroids = sums / np.bincount(assignments, minlength=k)[:, None]
    final_d2 = _squared_distances(data, centroids)
    cost = float(np.min(final_d2, axis=1).sum())
    return centroids, assignments, cost, history


def build_vocabulary(
    data: np.ndarray,
    size: int = 1000,
    restarts: int = 10,
    seed: int = 0,
) -> Vocabulary:
    """Best-of-restarts vocabulary: run kmeans with seeds seed..seed+restarts-1.

    The restart with the strictly lowest cost wins; ties keep the earliest
    seed. Identical (data, size, restarts, seed) give bit-identical output.
    """
    if restarts < 1:
        raise ValueError(f"restarts must be >= 1, got {restarts}")
    best: Vocabulary | None = None
    for offset in range(restarts):
        centroids, _, cost, history = kmeans(data, size, seed + offset)
        if best is None or cost < best.training_cost:
            best = Vocabulary(centroids, cost, tuple(history))
    assert best is not None
    return best


def save_vocabulary(
    path: str | os.PathLike, vocab: Vocabulary, meta: dict | None = None
) -> None:
    """Versioned binary: magic, version, V, dim, float32 centroids, cost.

    A JSON metadata blob (length-prefixed) is appended when given; readers
    that stop after the cost field still parse the file.
    """
    centroids = np.ascontiguousarray(vocab.centroids, dtype="<f4")
    v, dim = centroids.shape
    blob = json.dumps(meta, sort_keys=True).encode() if meta is not None else b""
    with open(path, "wb") as handle:
        handle.write(_VOCAB_MAGIC)
        handle.write(struct.pack("<III", _VOCAB_VERSION, v, dim))
        handle.write(centroids.tobytes())
        handle.write(struct.pack("<d", vocab.training_cost))
        handle.write(struct.pack("<I", len(blob)))
        handle.write(blob)


def load_vocabulary(path: str | os.PathLike) -> Vocabulary:
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:4] != _VOCAB_MAGIC:
        raise DataError(f"not a vocabulary file: {path}")
    try:
        version, v, dim = struct.unpack_from("<III", blob, 4)
    except struct.error as exc:
        raise DataError(f"truncated vocabulary file: {path}") from exc
    if version != _VOCAB_VERSION:
        raise DataError(f"unsupported vocabulary version {version} in {path}")
    offset = 16
    need = offset + 4 * v * dim + 8
    if len(blob) < need:
        raise DataError(f"truncated vocabulary file: {path}")
    centroids = (
        np.frombuffer(blob, dtype="<f4", offset=offset, count=v * dim)
        .reshape(v, dim)
        .astype(np.float64)
    )
    (cost,) = struct.unpack_from("<d", blob, offset + 4 * v * dim)
    meta = None
    tail = offset + 4 * v * dim + 8
    if len(blob) >= tail + 4:
        (meta_len,) = struct.unpack_from("<I", blob, tail)
        if meta_len and len(blob) >= tail + 4 + meta_len:
            meta = json.loads(blob[tail + 4 : tail + 4 + meta_len])
    digest = hashlib.sha256(blob).hexdigest()
    return Vocabulary(centroids, float(cost), meta=meta, file_sha256=digest)


def file_sha256(path: str | os.PathLike) -> str:
    with open(path, "rb") as handle:
        return hashlib.sha256(handle.read()).hexdigest()
