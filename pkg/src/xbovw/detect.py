"""Proposal dataset generation and the online detection pipeline.

Detection on one image runs: preprocess, selective search, per-box
bag-of-words classification, outlier removal over the surviving box
centers, and a coordinate-wise median fusion into a single detection.
Dataset generation reuses the same box histograms and labels each box by
its best overlap against the annotations.
"""

from __future__ import annotations

import json
import os
import struct
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .boxes import BoundingBox
from .config import RunConfig
from .encode import assign_hard_batch, chi2_feature_map
from .errors import DataError
from .image import reject_small_regions, threshold_mask
from .metrics import Annotation, iou
from .phow import phow_extract
from .proposals import selective_search
from .svm import SvmModel, check_compatibility, svm_score
from .vocab import Vocabulary

_DATASET_MAGIC = b"XBWD"
_DATASET_VERSION = 1


@dataclass(frozen=True)
class Detection:
    image_id: str
    bbox: BoundingBox
    score: float
    contributing_boxes: int


@dataclass
class ProposalDataset:
    image_ids: list[str]
    boxes: np.ndarray  # (N, 4) int32 x_min, y_min, x_max, y_max
    labels: np.ndarray  # (N,) int8 in {-1, +1}
    histograms: np.ndarray  # (N, V) float64
    totals: np.ndarray  # (N,) int32 descriptor counts
    vocab_sha256: str | None = None
    meta: dict | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        n = len(self.image_ids)
        if not (
            self.boxes.shape == (n, 4)
            and self.labels.shape == (n,)
            and self.histograms.shape[0] == n
            and self.totals.shape == (n,)
        ):
            raise ValueError("inconsistent dataset array shapes")

    @property
    def n(self) -> int:
        return len(self.image_ids)

    @property
    def vocab_size(self) -> int:
        return int(self.histograms.shape[1])

    @property
    def positives(self) -> int:
        return int(np.sum(self.labels == 1))

    @property
    def negatives(self) -> int:
        return int(np.sum(self.labels == -1))

    def subset(self, indices: np.ndarray) -> "ProposalDataset":
        indices = np.asarray(indices)
        return ProposalDataset(
            image_ids=[self.image_ids[i] for i in indices],
            boxes=self.boxes[indices],
            labels=self.labels[indices],
            histograms=self.histograms[indices],
            totals=self.totals[indices],
            vocab_sha256=self.vocab_sha256,
            meta=self.meta,
        )

    def bounding_box(self, i: int) -> BoundingBox:
        x0, y0, x1, y1 = (int(v) for v in self.boxes[i])
        return BoundingBox(x0, y0, x1, y1)


def metal_mask(img: np.ndarray, config: RunConfig, reject: bool = True) -> np.ndarray:
    """Dark-pixel candidate mask, optionally cleaned of small components."""
    mask = threshold_mask(img, config.threshold)
    if reject:
        mask = reject_small_regions(mask, config.min_area)
    return mask


def label_proposals(
    boxes: Sequence[BoundingBox],
    annotations: Sequence[Annotation],
    overlap_threshold: float = 0.4,
) -> np.ndarray:
    """+1 where best iou against any annotation strictly exceeds the threshold."""
    if not 0.0 < overlap_threshold <= 1.0:
        raise ValueError(f"overlap threshold must be in (0, 1], got {overlap_threshold}")
    labels = np.full(len(boxes), -1, dtype=np.int8)
    for i, box in enumerate(boxes):
        best = max((iou(box, ann.bbox) for ann in annotations), default=0.0)
        if best > overlap_threshold:
            labels[i] = 1
    return labels


def box_histograms(
    img: np.ndarray,
    boxes: Sequence[BoundingBox],
    vocab: Vocabulary,
    config: RunConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-box word histograms from one whole-image masked extraction.

    A descriptor belongs to a box when its keypoint center lies inside,
    which matches re-extracting with the mask restricted to the box.
    Returns (histograms (N, V) float64, totals (N,) int32).
    """
    mask = metal_mask(img, config)
    feats = phow_extract(img, mask, config.phow_params())
    n = len(boxes)
    hists = np.zeros((n, vocab.size), dtype=np.float64)
    totals = np.zeros(n, dtype=np.int32)
    if feats.descriptors.shape[0] == 0:
        return hists, totals
    words = assign_hard_batch(feats.descriptors, vocab)
    xs = feats.keypoints[:, 0]
    ys = feats.keypoints[:, 1]
    for i, box in enumerate(boxes):
        inside = (
            (xs >= box.x_min) & (xs <= box.x_max) & (ys >= box.y_min) & (ys <= box.y_max)
        )
        count = int(np.sum(inside))
        if count == 0:
            continue
        counts = np.bincount(words[inside], minlength=vocab.size)
        hists[i] = counts / count
        totals[i] = count
    return hists, totals


def build_dataset(
    images: Iterable[tuple[str, np.ndarray]],
    annotations: Sequence[Annotation],
    vocab: Vocabulary,
    config: RunConfig,
    balance: bool = True,
    vocab_sha256: str | None = None,
) -> ProposalDataset:
    """Selective-search windows of every image, encoded and labeled.

    Balancing down-samples the majority class with the config seed, so
    identical inputs give identical datasets.
    """
    by_image: dict[str, list[Annotation]] = {}
    for ann in annotations:
        by_image.setdefault(ann.image_id, []).append(ann)
    ids: list[str] = []
    box_rows: list[np.ndarray] = []
    label_rows: list[np.ndarray] = []
    hist_rows: list[np.ndarray] = []
    total_rows: list[np.ndarray] = []
    for image_id, img in images:
        boxes = selective_search(
            img, k=config.ss_k, sigma=config.ss_sigma, min_size=config.ss_min_size
        )
        if not boxes:
            continue
        hists, totals = box_histograms(img, boxes, vocab, config)
        labels = label_proposals(
            boxes, by_image.get(image_id, ()), config.label_overlap
        )
        ids.extend([image_id] * len(boxes))
        box_rows.append(
            np.array([b.as_tuple() for b in boxes], dtype=np.int32).reshape(-1, 4)
        )
        label_rows.append(labels)
        hist_rows.append(hists)
        total_rows.append(totals)
    if not ids:
        dataset = ProposalDataset(
            [],
            np.empty((0, 4), dtype=np.int32),
            np.empty(0, dtype=np.int8),
            np.empty((0, vocab.size), dtype=np.float64),
            np.empty(0, dtype=np.int32),
            vocab_sha256=vocab_sha256,
        )
        return dataset
    dataset = ProposalDataset(
        image_ids=ids,
        boxes=np.vstack(box_rows),
        labels=np.concatenate(label_rows),
        histograms=np.vstack(hist_rows),
        totals=np.concatenate(total_rows),
        vocab_sha256=vocab_sha256,
    )
    if balance:
        dataset = balance_dataset(dataset, config.seed)
    return dataset


def balance_dataset(dataset: ProposalDataset, seed: int) -> ProposalDataset:
    """Equalize class counts by seeded down-sampling of the majority class."""
    pos = np.flatnonzero(dataset.labels == 1)
    neg = np.flatnonzero(dataset.labels == -1)
    if pos.size == 0 or neg.size == 0 or pos.size == neg.size:
        return dataset
    rng = np.random.RandomState(seed)
    if pos.size > neg.size:
        pos = np.sort(rng.choice(pos, size=neg.size, replace=False))
    else:
        neg = np.sort(rng.choice(neg, size=pos.size, replace=False))
    keep = np.sort(np.concatenate([pos, neg]))
    return dataset.subset(keep)


def classify_boxes(
    img: np.ndarray,
    boxes: Sequence[BoundingBox],
    vocab: Vocabulary,
    model: SvmModel,
    config: RunConfig,
) -> list[tuple[BoundingBox, float]]:
    """Boxes whose kernel-mapped histogram scores above the model threshold."""
    kernel = config.kernel_config()
    check_compatibility(
        model, vocab.file_sha256, kernel, vocab.size * kernel.expansion
    )
    if not boxes:
        return []
    hists, _ = box_histograms(img, boxes, vocab, config)
    scores = svm_score(model, chi2_feature_map(hists, kernel))
    keep = scores > model.threshold
    return [(box, float(s)) for box, s, k in zip(boxes, scores, keep) if k]


def remove_outliers(
    scored: Sequence[tuple[BoundingBox, float]], mad_factor: float = 2.5
) -> list[tuple[BoundingBox, float]]:
    """Drop boxes whose center strays from the median center.

    A box is kept while its center distance d to the coordinate-wise
    median center satisfies d <= mad_factor * MAD(distances). Two or
    fewer boxes pass through unchanged, as does the degenerate case
    where the rule would discard everything (all centers equidistant
    with zero spread).
    """
    if len(scored) <= 2:
        return list(scored)
    centers = np.array([box.center for box, _ in scored], dtype=np.float64)
    median_center = np.median(centers, axis=0)
    dist = np.hypot(*(centers - median_center).T)
    mad = float(np.median(np.abs(dist - np.median(dist))))
    keep = dist <= mad_factor * mad
    if not np.any(keep):
        return list(scored)
    return [pair for pair, k in zip(scored, keep) if k]


def merge_boxes(scored: Sequence[tuple[BoundingBox, float]]) -> BoundingBox:
    """Coordinate-wise median box; even counts take the lower median."""
    if not scored:
        raise ValueError("cannot merge an empty box list")
    coords = np.array([box.as_tuple() for box, _ in scored], dtype=np.int64)
    coords.sort(axis=0)
    lower_median = coords[(len(scored) - 1) // 2]
    return BoundingBox(*(int(v) for v in lower_median))


def detect_pipeline(
    img: np.ndarray,
    model: SvmModel,
    vocab: Vocabulary,
    config: RunConfig,
    image_id: str = "",
    timings: dict[str, float] | None = None,
) -> Detection | None:
    """Single-image detection; None when no box survives classification."""
    t0 = time.perf_counter()
    boxes = selective_search(
        img, k=config.ss_k, sigma=config.ss_sigma, min_size=config.ss_min_size
    )
    t1 = time.perf_counter()
    scored = classify_boxes(img, boxes, vocab, model, config)
    t2 = time.perf_counter()
    if timings is not None:
        timings["proposals"] = timings.get("proposals", 0.0) + (t1 - t0)
        timings["classification"] = timings.get("classification", 0.0) + (t2 - t1)
    if not scored:
        return None
    kept = remove_outliers(scored, config.outlier_mad_factor)
    fused = merge_boxes(kept)
    best = max(score for _, score in kept)
    if timings is not None:
        timings["fusion"] = timings.get("fusion", 0.0) + (time.perf_counter() - t2)
    return Detection(
        image_id=image_id, bbox=fused, score=best, contributing_boxes=len(kept)
    )


def save_dataset(path: str | os.PathLike, dataset: ProposalDataset, meta: dict | None = None) -> None:
    """Versioned binary dataset dump (ids, boxes, labels, histograms)."""
    unique_ids = sorted(set(dataset.image_ids))
    index = {img_id: i for i, img_id in enumerate(unique_ids)}
    id_indices = np.array([index[i] for i in dataset.image_ids], dtype=np.int32)
    merged = dict(dataset.meta or {})
    if meta:
        merged.update(meta)
    if dataset.vocab_sha256:
        merged.setdefault("vocab_sha256", dataset.vocab_sha256)
    blob = json.dumps(merged, sort_keys=True).encode()
    with open(path, "wb") as handle:
        handle.write(_DATASET_MAGIC)
        handle.write(
            struct.pack("<III", _DATASET_VERSION, dataset.n, dataset.vocab_size)
        )
        handle.write(struct.pack("<I", len(unique_ids)))
        for img_id in unique_ids:
            encoded = img_id.encode()
            handle.write(struct.pack("<I", len(encoded)))
            handle.write(encoded)
        handle.write(id_indices.astype("<i4").tobytes())
        handle.write(dataset.boxes.astype("<i4").tobytes())
        handle.write(dataset.labels.astype("<i1").tobytes())
        handle.write(dataset.totals.astype("<i4").tobytes())
        handle.write(dataset.histograms.astype("<f8").tobytes())
        handle.write(struct.pack("<I", len(blob)))
        handle.write(blob)


def load_dataset(path: str | os.PathLike) -> ProposalDataset:
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:4] != _DATASET_MAGIC:
        raise DataError(f"not a dataset file: {path}")
    try:
        version, n, v = struct.unpack_from("<III", blob, 4)
        if version != _DATASET_VERSION:
            raise DataError(f"unsupported dataset version {version} in {path}")
        offset = 16
        (id_count,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        unique_ids = []
        for _ in range(id_count):
            (length,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            unique_ids.append(blob[offset : offset + length].decode())
            offset += length
    except struct.error as exc:
        raise DataError(f"truncated dataset file: {path}") from exc
    try:
        id_indices = np.frombuffer(blob, dtype="<i4", offset=offset, count=n)
        offset += 4 * n
        boxes = np.frombuffer(blob, dtype="<i4", offset=offset, count=4 * n).reshape(n, 4)
        offset += 16 * n
        labels = np.frombuffer(blob, dtype="<i1", offset=offset, count=n)
        offset += n
        totals = np.frombuffer(blob, dtype="<i4", offset=offset, count=n)
        offset += 4 * n
        hists = np.frombuffer(blob, dtype="<f8", offset=offset, count=n * v).reshape(n, v)
        offset += 8 * n * v
    except ValueError as exc:
        raise DataError(f"truncated dataset file: {path}") from exc
    meta = None
    if len(blob) >= offset + 4:
        (meta_len,) = struct.unpack_from("<I", blob, offset)
        if meta_len and len(blob) >= offset + 4 + meta_len:
            meta = json.loads(blob[offset + 4 : offset + 4 + meta_len])
    vocab_hash = (meta or {}).get("vocab_sha256")
    return ProposalDataset(
        image_ids=[unique_ids[i] for i in id_indices],
        boxes=boxes.astype(np.int32),
        labels=labels.astype(np.int8),
        histograms=hists.astype(np.float64),
        totals=totals.astype(np.int32),
        vocab_sha256=vocab_hash,
        meta=meta,
    )


def write_detections_jsonl(
    path: str | os.PathLike,
    results: Sequence[tuple[str, Detection | None]],
    meta: dict | None = None,
) -> None:
    """One JSON record per image; images without a detection get a none record.

    The first line is a meta record carrying the config hash and artifact
    hashes, standing in for a file header.
    """
    with open(path, "w", encoding="utf-8") as handle:
        if meta is not None:
            handle.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
        for image_id, det in results:
            if det is None:
                record: dict = {"image": image_id, "none": True}
            else:
                record = {
                    "image": image_id,
                    "x_min": det.bbox.x_min,
                    "y_min": det.bbox.y_min,
                    "x_max": det.bbox.x_max,
                    "y_max": det.bbox.y_max,
                    "score": det.score,
                }
            handle.write(json.dumps(record, sort_keys=True) + "\n")


def read_detections_jsonl(
    path: str | os.PathLike,
) -> tuple[dict | None, list[tuple[str, Detection | None]]]:
    meta = None
    results: list[tuple[str, Detection | None]] = []
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = handle.readlines()
    except OSError as exc:
        raise DataError(f"cannot read detections {path}: {exc}") from exc
    for line_no, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{line_no}: bad JSON: {exc}") from exc
        if "meta" in record and "image" not in record:
            meta = record["meta"]
            continue
        image_id = str(record.get("image"))
        if record.get("none"):
            results.append((image_id, None))
            continue
        try:
            det = Detection(
                image_id=image_id,
                bbox=BoundingBox(
                    int(record["x_min"]),
                    int(record["y_min"]),
                    int(record["x_max"]),
                    int(record["y_max"]),
                ),
                score=float(record["score"]),
                contributing_boxes=1,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{line_no}: bad detection record: {exc}") from exc
        results.append((image_id, det))
    return meta, results
