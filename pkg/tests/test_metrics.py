import json

import numpy as np
import pytest

from _oracles import rasterized_iou
from xbovw.boxes import BoundingBox
from xbovw.errors import UndefinedMetricError
from xbovw.metrics import (
    Annotation,
    classification_metrics,
    hit_rate,
    iou,
    load_annotations,
    mean_best_overlap,
    pr_curve,
    save_annotations,
    select_threshold_max_f1,
    write_learning_curve_csv,
    write_pr_curve_csv,
    LearningCurve,
    LearningCurvePoint,
    PRCurve,
    PRPoint,
)


def random_box(rng, side=64, max_extent=20):
    x0 = int(rng.randint(0, side - 1))
    y0 = int(rng.randint(0, side - 1))
    x1 = min(side - 1, x0 + int(rng.randint(0, max_extent)))
    y1 = min(side - 1, y0 + int(rng.randint(0, max_extent)))
    return BoundingBox(x0, y0, x1, y1)


def test_iou_identities():
    a = BoundingBox(3, 5, 12, 14)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(20, 20, 30, 30)) == 0.0
    inner = BoundingBox(5, 7, 8, 10)
    assert iou(a, inner) == inner.area / a.area
    assert iou(a, inner) == iou(inner, a)


def test_iou_hand_case():
    # 2x2 squares overlapping in a single pixel: 1 / (4 + 4 - 1)
    a = BoundingBox(0, 0, 1, 1)
    b = BoundingBox(1, 1, 2, 2)
    assert iou(a, b) == 1.0 / 7.0


def test_iou_matches_rasterized_sample():
    rng = np.random.RandomState(17)
    for _ in range(100):
        a = random_box(rng)
        b = random_box(rng)
        assert iou(a, b) == pytest.approx(rasterized_iou(a, b), abs=1e-12)


def test_hit_rate_and_mbo():
    annotations = [
        Annotation("a", BoundingBox(0, 0, 9, 9)),
        Annotation("b", BoundingBox(10, 10, 19, 19)),
    ]
    proposals = {
        "a": [BoundingBox(0, 0, 9, 9)],
        "b": [BoundingBox(0, 0, 5, 5)],
    }
    assert hit_rate(proposals, annotations, 0.4) == 0.5
    assert hit_rate(proposals, annotations, 1.0) == 0.5
    assert mean_best_overlap(proposals, annotations) == pytest.approx(0.5)
    # image without proposals contributes a zero best overlap
    assert mean_best_overlap({}, annotations) == 0.0
    with pytest.raises(ValueError):
        hit_rate(proposals, annotations, 0.0)
    with pytest.raises(ValueError):
        hit_rate(proposals, [], 0.4)


def test_classification_metrics_formulas():
    truth = np.array([1, 1, 1, -1, -1])
    preds = np.array([1, 1, -1, 1, -1])
    m = classification_metrics(preds, truth)
    assert m.vpr == 2 / 3
    assert m.ppv == 2 / 3
    assert m.f1 == pytest.approx(2 / 3)
    assert m.error == 2 / 5


def test_classification_metrics_edge_semantics():
    with pytest.raises(UndefinedMetricError):
        classification_metrics([1, -1], [-1, -1])
    m = classification_metrics([-1, -1], [1, -1])
    assert np.isnan(m.ppv)
    assert m.f1 == 0.0
    assert not m.ppv_defined
    with pytest.raises(ValueError):
        classification_metrics([1, 0], [1, -1])
    with pytest.raises(ValueError):
        classification_metrics([], [])


def test_pr_curve_structure():
    scores = np.array([0.9, 0.8, 0.3, 0.1])
    truth = np.array([1, 1, -1, -1])
    curve = pr_curve(scores, truth)
    thresholds = [p.threshold for p in curve.points]
    assert thresholds == sorted(thresholds)
    assert thresholds[0] == pytest.approx(0.1 - 1.0)
    assert thresholds[-1] == pytest.approx(0.9 + 1.0)
    assert len(curve.points) == 5  # 4 distinct scores: 3 midpoints + 2 sentinels
    best = max(p.f1 for p in curve.points)
    assert best == 1.0  # separable scores reach a perfect point
    # below-min sentinel predicts everything positive
    first = curve.points[0]
    assert first.vpr == 1.0 and first.ppv == 0.5


def test_pr_curve_requires_both_classes():
    with pytest.raises(UndefinedMetricError):
        pr_curve([0.1, 0.2], [1, 1])


def test_pr_curve_ties_share_thresholds():
    scores = np.array([0.5, 0.5, 0.2])
    truth = np.array([1, -1, -1])
    curve = pr_curve(scores, truth)
    assert len(curve.points) == 3  # 2 distinct scores


def test_select_threshold_max_f1():
    curve = pr_curve(np.array([0.9, 0.4, 0.1]), np.array([1, -1, -1]))
    chosen = select_threshold_max_f1(curve)
    f1_at = {p.threshold: p.f1 for p in curve.points}
    assert f1_at[chosen] == max(f1_at.values()) == 1.0


def test_select_threshold_prefers_higher_on_ties():
    curve = PRCurve(
        (
            PRPoint(0.1, 1.0, 0.8, 0.9),
            PRPoint(0.5, 0.9, 0.9, 0.9),
            PRPoint(0.9, 0.5, 1.0, 0.6),
        )
    )
    assert select_threshold_max_f1(curve) == 0.5
    with pytest.raises(ValueError):
        select_threshold_max_f1(PRCurve(()))


def test_annotations_roundtrip(tmp_path):
    annotations = [
        Annotation("img1", BoundingBox(1, 2, 3, 4)),
        Annotation("img2", BoundingBox(0, 0, 9, 9), class_name="gun"),
    ]
    path = tmp_path / "ann.json"
    save_annotations(path, annotations)
    back = load_annotations(path)
    assert back == annotations
    raw = json.loads(path.read_text())
    assert raw[0]["image"] == "img1"
    assert raw[0]["x_min"] == 1


def test_pr_curve_csv(tmp_path):
    curve = pr_curve(np.array([0.9, 0.4, 0.1]), np.array([1, -1, -1]))
    path = tmp_path / "pr.csv"
    write_pr_curve_csv(path, curve, header_comment="demo")
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("#")
    assert lines[1] == "th,vpr,ppv,f1"
    assert len(lines) == 2 + len(curve.points)
    cells = lines[2].split(",")
    assert float(cells[0]) == pytest.approx(curve.points[0].threshold)
    # the all-positive sentinel row renders its NaN precision as `nan`
    assert any("nan" in line for line in lines[2:])


def test_learning_curve_csv(tmp_path):
    curve = LearningCurve(
        (
            LearningCurvePoint(0.1, 0.2, 0.25),
            LearningCurvePoint(1.0, 0.15, 0.3),
        )
    )
    path = tmp_path / "lc.csv"
    write_learning_curve_csv(path, curve, header_comment="demo")
    lines = path.read_text().strip().splitlines()
    assert lines[1] == "lambda,val_error,test_error"
    assert len(lines) == 4
    assert lines[2] == "0.1,0.2,0.25"
