"""Report figures and detection overlays rendered to files.

All rendering is headless (Agg) and deterministic: identical inputs
produce byte-identical PNGs.
"""

from __future__ import annotations

import math
import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image, ImageDraw

from .boxes import BoundingBox
from .detect import Detection
from .metrics import Annotation, LearningCurve, PRCurve

_GROUND_TRUTH_COLOR = (0, 255, 0)
_DETECTION_COLOR = (255, 0, 0)
_BOX_WIDTH = 3


def _save(fig, path: str | os.PathLike, comment: str | None) -> None:
    metadata = {"Description": comment} if comment else None
    fig.savefig(path, dpi=100, metadata=metadata)
    plt.close(fig)


def save_pr_curve_figure(
    path: str | os.PathLike,
    curve: PRCurve,
    chosen_threshold: float | None = None,
    comment: str | None = None,
) -> None:
    """Precision against recall, one marker per threshold."""
    vpr = [p.vpr for p in curve.points]
    ppv = [p.ppv for p in curve.points]
    fig, ax = plt.subplots(figsize=(6, 5))
    ax.plot(vpr, ppv, marker=".", linestyle="-", color="tab:blue")
    if chosen_threshold is not None:
        for p in curve.points:
            if p.threshold == chosen_threshold and not math.isnan(p.ppv):
                ax.plot([p.vpr], [p.ppv], marker="o", color="tab:red")
                ax.annotate(f"th_a={chosen_threshold:.4f}", (p.vpr, p.ppv))
                break
    ax.set_xlabel("VPR (recall)")
    ax.set_ylabel("PPV (precision)")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    _save(fig, path, comment)


def save_learning_curve_figure(
    path: str | os.PathLike, curve: LearningCurve, comment: str | None = None
) -> None:
    """Validation and test error against the regularizer, log x axis."""
    lams = [p.lam for p in curve.points]
    val = [p.validation_error for p in curve.points]
    test = [p.test_error for p in curve.points]
    fig, ax = plt.subplots(figsize=(6, 5))
    ax.semilogx(lams, val, marker="o", label="validation error")
    ax.semilogx(lams, test, marker="s", label="test error")
    ax.set_xlabel("lambda")
    ax.set_ylabel("error rate")
    ax.grid(True, alpha=0.3)
    ax.legend()
    _save(fig, path, comment)


def save_proposal_sweep_figure(
    path: str | os.PathLike,
    rows: Sequence[tuple[float, float, float, float]],
    comment: str | None = None,
) -> None:
    """Hit rate against segmentation coarseness k, one line per threshold.

    rows are (k, pascal_threshold, hit_rate, mean_best_overlap).
    """
    fig, ax = plt.subplots(figsize=(6, 5))
    thresholds = sorted({r[1] for r in rows})
    for th in thresholds:
        pts = sorted((r[0], r[2]) for r in rows if r[1] == th)
        ax.plot(
            [p[0] for p in pts],
            [p[1] for p in pts],
            marker="o",
            label=f"pascal {th:g}",
        )
    mbo_pts = sorted({(r[0], r[3]) for r in rows})
    ax.plot(
        [p[0] for p in mbo_pts],
        [p[1] for p in mbo_pts],
        marker="x",
        linestyle="--",
        color="gray",
        label="mean best overlap",
    )
    ax.set_xlabel("segmentation k")
    ax.set_ylabel("rate")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend()
    _save(fig, path, comment)


def render_overlay(
    img: np.ndarray,
    annotations: Sequence[Annotation] = (),
    detection: Detection | None = None,
) -> np.ndarray:
    """RGB uint8 frame: green ground-truth boxes, red fused detection box."""
    img = np.asarray(img, dtype=np.float64)
    base = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    frame = Image.fromarray(base, mode="L").convert("RGB")
    draw = ImageDraw.Draw(frame)
    for ann in annotations:
        draw.rectangle(
            (ann.bbox.x_min, ann.bbox.y_min, ann.bbox.x_max, ann.bbox.y_max),
            outline=_GROUND_TRUTH_COLOR,
            width=_BOX_WIDTH,
        )
    if detection is not None:
        box = detection.bbox
        draw.rectangle(
            (box.x_min, box.y_min, box.x_max, box.y_max),
            outline=_DETECTION_COLOR,
            width=_BOX_WIDTH,
        )
    return np.asarray(frame)


def save_overlay_png(
    path: str | os.PathLike,
    img: np.ndarray,
    annotations: Sequence[Annotation] = (),
    detection: Detection | None = None,
) -> None:
    Image.fromarray(render_overlay(img, annotations, detection)).save(path)


def boxes_only_overlay(
    img: np.ndarray, boxes: Sequence[BoundingBox], color: tuple[int, int, int]
) -> np.ndarray:
    """Debug overlay of raw proposal boxes."""
    base = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    frame = Image.fromarray(base, mode="L").convert("RGB")
    draw = ImageDraw.Draw(frame)
    for box in boxes:
        draw.rectangle(box.as_tuple(), outline=color, width=1)
    return np.asarray(frame)
