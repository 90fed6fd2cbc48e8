"""Overlap criterion, classification metrics, PR curves, and learning curves.

Positive class throughout is +1 (gun present). VPR is recall (true
positive rate), PPV is precision. Metrics with an undefined denominator
are surfaced explicitly: an impossible VPR raises, an undefined PPV is
reported as NaN so curve maxima are never corrupted by silent zeros.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .boxes import BoundingBox
from .errors import DataError, UndefinedMetricError


@dataclass(frozen=True)
class Annotation:
    image_id: str
    bbox: BoundingBox
    class_name: str = "gun"


@dataclass(frozen=True)
class ClassificationMetrics:
    vpr: float
    ppv: float  # NaN when no positive predictions exist
    f1: float
    error: float

    @property
    def ppv_defined(self) -> bool:
        return not math.isnan(self.ppv)


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    vpr: float
    ppv: float
    f1: float


@dataclass(frozen=True)
class PRCurve:
    points: tuple[PRPoint, ...]


@dataclass(frozen=True)
class LearningCurvePoint:
    lam: float
    validation_error: float
    test_error: float


@dataclass(frozen=True)
class LearningCurve:
    points: tuple[LearningCurvePoint, ...]


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union with inclusive pixel areas; 0 when disjoint."""
    inter = a.intersection_area(b)
    if inter == 0:
        return 0.0
    union = a.area + b.area - inter
    return inter / union


def hit_rate(
    proposals_per_image: Mapping[str, Sequence[BoundingBox]],
    annotations: Sequence[Annotation],
    pascal_threshold: float,
) -> float:
    """Fraction of annotated guns covered by some proposal at iou >= threshold."""
    if not 0.0 < pascal_threshold <= 1.0:
        raise ValueError(f"pascal threshold must be in (0, 1], got {pascal_threshold}")
    if not annotations:
        raise ValueError("hit rate over an empty annotation set is undefined")
    hits = 0
    for ann in annotations:
        boxes = proposals_per_image.get(ann.image_id, ())
        if any(iou(box, ann.bbox) >= pascal_threshold for box in boxes):
            hits += 1
    return hits / len(annotations)


def mean_best_overlap(
    proposals_per_image: Mapping[str, Sequence[BoundingBox]],
    annotations: Sequence[Annotation],
) -> float:
    """Mean over annotated guns of the best iou among that image's proposals."""
    if not annotations:
        raise ValueError("mean best overlap over an empty annotation set is undefined")
    best = []
    for ann in annotations:
        boxes = proposals_per_image.get(ann.image_id, ())
        best.append(max((iou(box, ann.bbox) for box in boxes), default=0.0))
    return float(np.mean(best))


def _confusion(predictions: np.ndarray, truth: np.ndarray) -> tuple[int, int, int, int]:
    vp = int(np.sum((predictions == 1) & (truth == 1)))
    fp = int(np.sum((predictions == 1) & (truth == -1)))
    fn = int(np.sum((predictions == -1) & (truth == 1)))
    tn = int(np.sum((predictions == -1) & (truth == -1)))
    return vp, fp, fn, tn


def classification_metrics(
    predictions: Sequence[int] | np.ndarray, truth: Sequence[int] | np.ndarray
) -> ClassificationMetrics:
    """VPR, PPV, F1 and error rate from +/-1 predictions and truth.

    Raises UndefinedMetricError when truth has no positives (VPR has no
    denominator). PPV is NaN when nothing was predicted positive; F1 is 0
    whenever there are no true positives.
    """
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.shape != truth.shape or predictions.ndim != 1:
        raise ValueError(f"shape mismatch {predictions.shape} vs {truth.shape}")
    if predictions.size == 0:
        raise ValueError("empty prediction list")
    if not np.all(np.isin(predictions, (-1, 1))) or not np.all(np.isin(truth, (-1, 1))):
        raise ValueError("labels must be -1 or +1")
    vp, fp, fn, tn = _confusion(predictions, truth)
    if vp + fn == 0:
        raise UndefinedMetricError("no positive examples in truth: VPR undefined")
    vpr = vp / (vp + fn)
    ppv = vp / (vp + fp) if vp + fp > 0 else float("nan")
    if vp == 0:
        f1 = 0.0
    else:
        f1 = 2.0 * vpr * ppv / (vpr + ppv)
    error = (fp + fn) / predictions.size
    return ClassificationMetrics(vpr=vpr, ppv=ppv, f1=f1, error=error)


def pr_curve(scores: Sequence[float] | np.ndarray, truth: Sequence[int] | np.ndarray) -> PRCurve:
    """Precision-recall sweep over score thresholds.

    Thresholds are the midpoints between consecutive distinct scores plus
    one sentinel below the minimum and one above the maximum; each point
    classifies by score > threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if scores.shape != truth.shape or scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores and truth must be equal-length non-empty vectors")
    if not (np.any(truth == 1) and np.any(truth == -1)):
        raise UndefinedMetricError("pr curve needs both classes in truth")
    distinct = np.unique(scores)
    thresholds = np.concatenate(
        [
            [distinct[0] - 1.0],
            (distinct[:-1] + distinct[1:]) / 2.0,
            [distinct[-1] + 1.0],
        ]
    )
    points = []
    for th in thresholds:
        preds = np.where(scores > th, 1, -1)
        m = classification_metrics(preds, truth)
        points.append(PRPoint(float(th), m.vpr, m.ppv, m.f1))
    return PRCurve(tuple(points))


def select_threshold_max_f1(curve: PRCurve) -> float:
    """Threshold of the max-F1 point; ties resolve to the higher threshold."""
    if not curve.points:
        raise ValueError("empty curve")
    best = max(curve.points, key=lambda p: (p.f1, p.threshold))
    return best.threshold


def tuned_error(model, data) -> float:
    """Error rate of a model over a labeled set at its stored threshold."""
    from .svm import svm_classify

    preds = svm_classify(model, data.x)
    return float(np.mean(preds != data.y))


def learning_curve(
    train,
    val,
    test,
    lambdas: Sequence[float],
    max_epochs: int = 500,
    tol: float = 1e-6,
    seed: int = 0,
) -> LearningCurve:
    """Per-lambda ridge training with validation-tuned decision thresholds.

    For each lambda the classifier is trained on `train`, the threshold is
    set to the max-F1 point of the validation PR curve, and the error
    rates of validation and test at that threshold are recorded.
    """
    from .svm import svm_score, svm_train

    if not lambdas:
        raise ValueError("lambdas must be non-empty")
    if any(lam <= 0 for lam in lambdas):
        raise ValueError("lambdas must be positive")
    points = []
    for lam in lambdas:
        model = svm_train(train, lam, max_epochs=max_epochs, tol=tol, seed=seed)
        val_scores = svm_score(model, val.x)
        model.threshold = select_threshold_max_f1(pr_curve(val_scores, val.y))
        val_error = tuned_error(model, val)
        test_error = tuned_error(model, test)
        points.append(LearningCurvePoint(float(lam), val_error, test_error))
    return LearningCurve(tuple(points))


def load_annotations(path: str | os.PathLike) -> list[Annotation]:
    """Read the JSON annotation array."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read annotations {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise DataError(f"annotations {path}: expected a JSON array")
    out = []
    for i, item in enumerate(raw):
        try:
            out.append(
                Annotation(
                    image_id=str(item["image"]),
                    bbox=BoundingBox(
                        int(item["x_min"]),
                        int(item["y_min"]),
                        int(item["x_max"]),
                        int(item["y_max"]),
                    ),
                    class_name=str(item.get("class", "gun")),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"annotations {path}: bad entry {i}: {exc}") from exc
    return out


def save_annotations(path: str | os.PathLike, annotations: Sequence[Annotation]) -> None:
    payload = [
        {
            "image": ann.image_id,
            "x_min": ann.bbox.x_min,
            "y_min": ann.bbox.y_min,
            "x_max": ann.bbox.x_max,
            "y_max": ann.bbox.y_max,
            "class": ann.class_name,
        }
        for ann in annotations
    ]
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _fmt(value: float) -> str:
    return "nan" if math.isnan(value) else repr(float(value))


def write_pr_curve_csv(
    path: str | os.PathLike, curve: PRCurve, header_comment: str | None = None
) -> None:
    """CSV columns th,vpr,ppv,f1; NaN precision renders as `nan`."""
    with open(path, "w", encoding="utf-8") as handle:
        if header_comment:
            handle.write(f"# {header_comment}\n")
        handle.write("th,vpr,ppv,f1\n")
        for p in curve.points:
            handle.write(
                f"{_fmt(p.threshold)},{_fmt(p.vpr)},{_fmt(p.ppv)},{_fmt(p.f1)}\n"
            )


def write_learning_curve_csv(
    path: str | os.PathLike, curve: LearningCurve, header_comment: str | None = None
) -> None:
    """CSV columns lambda,val_error,test_error."""
    with open(path, "w", encoding="utf-8") as handle:
        if header_comment:
            handle.write(f"# {header_comment}\n")
        handle.write("lambda,val_error,test_error\n")
        for p in curve.points:
            handle.write(
                f"{_fmt(p.lam)},{_fmt(p.validation_error)},{_fmt(p.test_error)}\n"
            )
