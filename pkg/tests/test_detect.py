import numpy as np
import pytest

from xbovw.boxes import BoundingBox
from xbovw.detect import (
    Detection,
    ProposalDataset,
    balance_dataset,
    box_histograms,
    build_dataset,
    detect_pipeline,
    label_proposals,
    load_dataset,
    merge_boxes,
    metal_mask,
    read_detections_jsonl,
    remove_outliers,
    save_dataset,
    write_detections_jsonl,
)
from xbovw.encode import bovw_histogram
from xbovw.errors import DataError
from xbovw.metrics import Annotation
from xbovw.phow import phow_extract
from xbovw.svm import SvmModel, svm_train, LabeledSet
from xbovw.encode import chi2_feature_map


def test_metal_mask_threshold_and_cleanup(mini_config):
    img = np.full((64, 64), 0.9)
    img[10:30, 10:30] = 0.1  # 400 px metal blob
    img[50, 50] = 0.1  # too small to survive cleanup
    raw = metal_mask(img, mini_config, reject=False)
    assert raw[50, 50]
    cleaned = metal_mask(img, mini_config)
    assert cleaned[10:30, 10:30].all()
    assert not cleaned[50, 50]


def test_label_proposals_strict_overlap():
    annotations = [Annotation("a", BoundingBox(0, 0, 9, 9))]
    boxes = [
        BoundingBox(0, 0, 9, 9),  # iou 1.0
        BoundingBox(0, 0, 9, 4),  # iou 0.5
        BoundingBox(0, 0, 4, 7),  # iou 0.4 exactly
        BoundingBox(50, 50, 59, 59),  # disjoint
    ]
    assert abs(
        BoundingBox(0, 0, 4, 7).intersection_area(annotations[0].bbox) / 100 - 0.4
    ) < 1e-12
    labels = label_proposals(boxes, annotations, 0.4)
    assert labels.tolist() == [1, 1, -1, -1]  # 0.4 does not strictly exceed
    assert label_proposals(boxes, [], 0.4).tolist() == [-1, -1, -1, -1]
    with pytest.raises(ValueError):
        label_proposals(boxes, annotations, 0.0)


def test_box_histograms_match_per_box_masked_extraction(
    mini_scenes, mini_vocab, mini_config
):
    """The pooled whole-image pass equals running each box on its own."""
    scene = mini_scenes[0]
    boxes = [scene.annotation.bbox, BoundingBox(5, 5, 120, 120)]
    hists, totals = box_histograms(scene.image, boxes, mini_vocab, mini_config)
    full_mask = metal_mask(scene.image, mini_config)
    for i, box in enumerate(boxes):
        box_mask = np.zeros_like(full_mask)
        box_mask[box.y_min : box.y_max + 1, box.x_min : box.x_max + 1] = True
        feats = phow_extract(
            scene.image, full_mask & box_mask, mini_config.phow_params()
        )
        expected = bovw_histogram(feats.descriptors, mini_vocab)
        assert totals[i] == expected.total_descriptors
        assert np.allclose(hists[i], expected.counts_normalized, atol=1e-12)


def test_box_histograms_empty_box(mini_scenes, mini_vocab, mini_config):
    scene = mini_scenes[0]
    bright_corner = BoundingBox(0, 0, 3, 3)
    hists, totals = box_histograms(
        scene.image, [bright_corner], mini_vocab, mini_config
    )
    assert totals[0] == 0
    assert np.array_equal(hists[0], np.zeros(mini_vocab.size))


def toy_dataset(labels):
    labels = np.asarray(labels, dtype=np.int8)
    n = labels.size
    return ProposalDataset(
        image_ids=[f"img{i}" for i in range(n)],
        boxes=np.tile(np.array([[0, 0, 4, 4]], dtype=np.int32), (n, 1)),
        labels=labels,
        histograms=np.arange(n * 3, dtype=np.float64).reshape(n, 3),
        totals=np.full(n, 7, dtype=np.int32),
    )


def test_balance_dataset_downsamples_majority():
    ds = toy_dataset([1, 1, -1, -1, -1, -1, -1])
    balanced = balance_dataset(ds, seed=0)
    assert balanced.positives == balanced.negatives == 2
    # rows keep their original order and content
    kept = [i for i, img in enumerate(ds.image_ids) if img in balanced.image_ids]
    assert np.array_equal(balanced.histograms, ds.histograms[kept])
    again = balance_dataset(ds, seed=0)
    assert balanced.image_ids == again.image_ids
    other_seed = balance_dataset(ds, seed=1)
    assert other_seed.positives == other_seed.negatives == 2


def test_balance_dataset_noop_cases():
    even = toy_dataset([1, -1, 1, -1])
    assert balance_dataset(even, seed=0) is even
    one_sided = toy_dataset([1, 1, 1])
    assert balance_dataset(one_sided, seed=0) is one_sided


def test_build_dataset_labels_and_balance(mini_scenes, mini_vocab, mini_config):
    scenes = mini_scenes[:2]
    images = [(s.image_id, s.image) for s in scenes]
    annotations = [s.annotation for s in scenes]
    ds = build_dataset(images, annotations, mini_vocab, mini_config, balance=False)
    assert ds.n > 0
    assert set(ds.image_ids) == {s.image_id for s in scenes}
    assert ds.positives >= 1
    assert ds.histograms.shape == (ds.n, mini_vocab.size)
    balanced = build_dataset(images, annotations, mini_vocab, mini_config)
    assert balanced.positives == balanced.negatives
    assert balanced.n <= ds.n


def test_remove_outliers_keeps_cluster():
    cluster = [
        (BoundingBox(10 + i, 10, 30 + i, 30), 0.5) for i in range(5)
    ]
    stray = (BoundingBox(200, 200, 220, 220), 0.9)
    kept = remove_outliers(cluster + [stray], mad_factor=2.5)
    assert stray not in kept
    assert len(kept) == 5


def test_remove_outliers_small_and_degenerate_inputs():
    pair = [(BoundingBox(0, 0, 1, 1), 0.1), (BoundingBox(50, 50, 60, 60), 0.2)]
    assert remove_outliers(pair) == pair
    # identical centers: MAD is 0 and everything is at distance 0
    same = [(BoundingBox(0, 0, 10, 10), 0.1)] * 4
    assert remove_outliers(same) == same
    assert remove_outliers([]) == []


def test_remove_outliers_all_discarded_falls_back():
    # four corners, all equally far from the median center: MAD of the
    # distances is 0, so the rule alone would discard every box
    boxes = [
        (BoundingBox(0, 0, 2, 2), 0.1),
        (BoundingBox(100, 0, 102, 2), 0.1),
        (BoundingBox(0, 100, 2, 102), 0.1),
        (BoundingBox(100, 100, 102, 102), 0.1),
    ]
    assert remove_outliers(boxes) == boxes


def test_merge_boxes_lower_median():
    scored = [
        (BoundingBox(0, 0, 10, 10), 0.1),
        (BoundingBox(2, 2, 12, 12), 0.2),
        (BoundingBox(4, 4, 14, 14), 0.3),
        (BoundingBox(6, 6, 16, 16), 0.4),
    ]
    # even count: lower median of each sorted coordinate
    assert merge_boxes(scored) == BoundingBox(2, 2, 12, 12)
    assert merge_boxes(scored[:3]) == BoundingBox(2, 2, 12, 12)
    with pytest.raises(ValueError):
        merge_boxes([])


def test_detect_pipeline_none_when_nothing_passes(
    mini_scenes, mini_vocab, mini_config
):
    kernel = mini_config.kernel_config()
    dim = mini_vocab.size * kernel.expansion
    model = SvmModel(
        w=np.zeros(dim),
        b=0.0,
        lam=1.0,
        threshold=1e9,
        kernel=kernel,
        vocab_sha256=mini_vocab.file_sha256,
    )
    result = detect_pipeline(
        mini_scenes[0].image, model, mini_vocab, mini_config, image_id="x"
    )
    assert result is None


def test_detect_pipeline_finds_planted_gun(mini_scenes, mini_vocab, mini_config):
    from xbovw.metrics import iou, pr_curve, select_threshold_max_f1
    from xbovw.svm import svm_score

    train = mini_scenes[:4]
    images = [(s.image_id, s.image) for s in train]
    annotations = [s.annotation for s in train]
    ds = build_dataset(images, annotations, mini_vocab, mini_config)
    kernel = mini_config.kernel_config()
    feats = chi2_feature_map(ds.histograms, kernel)
    model = svm_train(
        LabeledSet(feats, ds.labels.astype(np.float64)), lam=0.01, seed=0
    )
    model.kernel = kernel
    model.vocab_sha256 = mini_vocab.file_sha256
    model.threshold = select_threshold_max_f1(
        pr_curve(svm_score(model, feats), ds.labels)
    )
    timings = {}
    hits = 0
    for scene in mini_scenes[4:]:
        det = detect_pipeline(
            scene.image, model, mini_vocab, mini_config,
            image_id=scene.image_id, timings=timings,
        )
        if det is not None and iou(det.bbox, scene.annotation.bbox) >= 0.4:
            hits += 1
    assert hits >= 1
    assert set(timings) == {"proposals", "classification", "fusion"}
    assert all(v >= 0.0 for v in timings.values())


def test_dataset_roundtrip(tmp_path, mini_dataset):
    path = tmp_path / "data.xbwd"
    save_dataset(path, mini_dataset, meta={"split": "mini"})
    back = load_dataset(path)
    assert back.image_ids == mini_dataset.image_ids
    assert np.array_equal(back.boxes, mini_dataset.boxes)
    assert np.array_equal(back.labels, mini_dataset.labels)
    assert np.array_equal(back.totals, mini_dataset.totals)
    assert np.allclose(back.histograms, mini_dataset.histograms, atol=1e-15)
    assert back.meta["split"] == "mini"


def test_dataset_load_rejects_corruption(tmp_path, mini_dataset):
    path = tmp_path / "data.xbwd"
    save_dataset(path, mini_dataset)
    blob = path.read_bytes()
    bad = tmp_path / "bad.xbwd"
    bad.write_bytes(b"JUNK" + blob[4:])
    with pytest.raises(DataError):
        load_dataset(bad)
    short = tmp_path / "short.xbwd"
    short.write_bytes(blob[:20])
    with pytest.raises(DataError):
        load_dataset(short)


def test_detections_jsonl_roundtrip(tmp_path):
    results = [
        ("img1", Detection("img1", BoundingBox(1, 2, 3, 4), 0.75, 3)),
        ("img2", None),
    ]
    path = tmp_path / "det.jsonl"
    write_detections_jsonl(path, results, meta={"config": "abc"})
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 3
    assert '"meta"' in lines[0]
    assert '"none": true' in lines[2]
    meta, back = read_detections_jsonl(path)
    assert meta == {"config": "abc"}
    assert back[0][0] == "img1"
    assert back[0][1].bbox == BoundingBox(1, 2, 3, 4)
    assert back[0][1].score == 0.75
    assert back[1] == ("img2", None)


def test_detections_jsonl_rejects_bad_records(tmp_path):
    path = tmp_path / "det.jsonl"
    path.write_text("{not json}\n")
    with pytest.raises(DataError):
        read_detections_jsonl(path)
    path.write_text('{"image": "a", "x_min": 1}\n')
    with pytest.raises(DataError):
        read_detections_jsonl(path)
