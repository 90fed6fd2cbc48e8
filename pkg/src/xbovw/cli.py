"""Command-line surface: build-vocab, build-dataset, train, tune, detect, eval.

Exit codes: 0 success, 1 usage error, 2 data error, 3 artifact mismatch.
Every artifact embeds the config hash and seed; detect refuses artifacts
whose recorded hashes disagree.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .boxes import BoundingBox
from .config import RunConfig, _parse_value, load_config_values
from .detect import (
    Detection,
    ProposalDataset,
    balance_dataset,
    box_histograms,
    build_dataset,
    detect_pipeline,
    label_proposals,
    load_dataset,
    metal_mask,
    read_detections_jsonl,
    save_dataset,
    write_detections_jsonl,
)
from .encode import bovw_histogram, chi2_feature_map
from .errors import ArtifactMismatchError, DataError, UndefinedMetricError, UsageError
from .image import load_grayscale, resize_max_side
from .metrics import (
    Annotation,
    classification_metrics,
    iou,
    hit_rate,
    learning_curve,
    load_annotations,
    mean_best_overlap,
    pr_curve,
    select_threshold_max_f1,
    write_learning_curve_csv,
    write_pr_curve_csv,
)
from .phow import phow_extract, save_descriptors
from .plots import (
    save_learning_curve_figure,
    save_overlay_png,
    save_pr_curve_figure,
    save_proposal_sweep_figure,
)
from .proposals import selective_search, write_proposals_csv
from .svm import (
    LabeledSet,
    check_compatibility,
    load_model,
    model_sha256,
    save_model,
    svm_classify,
    svm_objective,
    svm_score,
    svm_train,
)
from .vocab import build_vocabulary, load_vocabulary, save_vocabulary

_IMAGE_SUFFIXES = (".png", ".pgm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we reserve 2 for data errors
        raise UsageError(message)


def _collect_images(tokens: list[str]) -> list[str]:
    """Expand files, directories, and glob patterns into an ordered path list."""
    paths: list[str] = []
    for token in tokens:
        if os.path.isdir(token):
            children = sorted(
                os.path.join(token, name)
                for name in os.listdir(token)
                if name.lower().endswith(_IMAGE_SUFFIXES)
            )
            if not children:
                raise DataError(f"no images in directory {token}")
            paths.extend(children)
        elif os.path.isfile(token):
            paths.append(token)
        else:
            matched = sorted(glob.glob(token))
            if not matched:
                raise DataError(f"no such image, directory, or pattern: {token}")
            paths.extend(matched)
    seen = set()
    unique = []
    for p in paths:
        if p not in seen:
            seen.add(p)
            unique.append(p)
    return unique


def _image_id(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="flat key = value config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument(
        "--max-side", type=int, dest="max_side", help="downscale long side before processing"
    )


def _resolve_config(args: argparse.Namespace, **extra) -> RunConfig:
    base = RunConfig()
    if getattr(args, "config", None):
        values = load_config_values(args.config)  # DataError on bad file
        try:
            base = base.replaced(**values)
        except (TypeError, ValueError) as exc:
            raise DataError(f"bad config {args.config}: {exc}") from exc
    overrides: dict = {}
    for item in getattr(args, "overrides", []):
        key, eq, raw = item.partition("=")
        key = key.strip()
        if not eq or not key:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            overrides[key] = _parse_value(raw, "<cli>", 0)
        except DataError as exc:
            raise UsageError(str(exc)) from exc
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "max_side", None) is not None:
        overrides["max_side"] = args.max_side
    overrides.update({k: v for k, v in extra.items() if v is not None})
    if "phow_scales" in overrides:
        overrides["phow_scales"] = tuple(overrides["phow_scales"])
    try:
        return base.replaced(**overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad configuration value: {exc}") from exc


def _load_image(path: str, config: RunConfig) -> tuple[np.ndarray, tuple[int, int]]:
    """Image in working resolution plus its original (h, w)."""
    img = load_grayscale(path)
    original = img.shape
    return resize_max_side(img, config.max_side), original


def _scale_annotations(
    annotations: list[Annotation], original: tuple[int, int], working: tuple[int, int]
) -> list[Annotation]:
    """Map annotation boxes from original into working resolution."""
    if original == working:
        return annotations
    sy = working[0] / original[0]
    sx = working[1] / original[1]
    out = []
    for ann in annotations:
        out.append(
            Annotation(
                ann.image_id,
                BoundingBox(
                    min(int(round(ann.bbox.x_min * sx)), working[1] - 1),
                    min(int(round(ann.bbox.y_min * sy)), working[0] - 1),
                    min(int(round(ann.bbox.x_max * sx)), working[1] - 1),
                    min(int(round(ann.bbox.y_max * sy)), working[0] - 1),
                ),
                ann.class_name,
            )
        )
    return out


def _scale_box_up(
    box: BoundingBox, original: tuple[int, int], working: tuple[int, int]
) -> BoundingBox:
    if original == working:
        return box
    sy = original[0] / working[0]
    sx = original[1] / working[1]
    return BoundingBox(
        min(int(round(box.x_min * sx)), original[1] - 1),
        min(int(round(box.y_min * sy)), original[0] - 1),
        min(int(round(box.x_max * sx)), original[1] - 1),
        min(int(round(box.y_max * sy)), original[0] - 1),
    )


def _artifact_comment(config: RunConfig, **hashes) -> str:
    parts = [f"config_hash={config.config_hash()}", f"seed={config.seed}"]
    parts.extend(f"{k}={v}" for k, v in hashes.items() if v)
    return " ".join(parts)


# ---------------------------------------------------------------------------
# build-vocab


def _cmd_build_vocab(args: argparse.Namespace) -> int:
    config = _resolve_config(
        args, vocab_size=args.vocab_size, vocab_restarts=args.restarts
    )
    paths = _collect_images(args.images)
    collected = []
    for path in paths:
        img, _ = _load_image(path, config)
        if args.mask_mode == "none":
            mask = None
        elif args.mask_mode == "metal-clean":
            mask = metal_mask(img, config, reject=True)
        else:  # plain dark-pixel mask, small regions kept
            mask = metal_mask(img, config, reject=False)
        feats = phow_extract(img, mask, config.phow_params())
        collected.append(feats.descriptors)
    descriptors = (
        np.vstack(collected) if collected else np.empty((0, 128), dtype=np.float64)
    )
    if descriptors.shape[0] < config.vocab_size:
        raise DataError(
            f"insufficient descriptors: {descriptors.shape[0]} < V={config.vocab_size}"
        )
    if args.descriptor_cache:
        save_descriptors(args.descriptor_cache, descriptors)
    vocab = build_vocabulary(
        descriptors, config.vocab_size, config.vocab_restarts, config.seed
    )
    meta = {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "mask_mode": args.mask_mode,
        "n_descriptors": int(descriptors.shape[0]),
        "n_images": len(paths),
    }
    save_vocabulary(args.out, vocab, meta)
    print(
        f"vocabulary V={vocab.size} cost={vocab.training_cost:.6f} "
        f"descriptors={descriptors.shape[0]} images={len(paths)} -> {args.out}"
    )
    return 0


# ---------------------------------------------------------------------------
# build-dataset (parallel worker state)

_WORKER: dict = {}


def _dataset_worker_init(vocab_path: str, config_dict: dict, ann_path: str | None) -> None:
    config_dict = dict(config_dict)
    config_dict["phow_scales"] = tuple(config_dict["phow_scales"])
    _WORKER["config"] = RunConfig(**config_dict)
    _WORKER["vocab"] = load_vocabulary(vocab_path)
    _WORKER["annotations"] = load_annotations(ann_path) if ann_path else []


def _dataset_worker(path: str):
    config: RunConfig = _WORKER["config"]
    try:
        img, original = _load_image(path, config)
        image_id = _image_id(path)
        boxes = selective_search(
            img, k=config.ss_k, sigma=config.ss_sigma, min_size=config.ss_min_size
        )
        hists, totals = box_histograms(img, boxes, _WORKER["vocab"], config)
        anns = [a for a in _WORKER["annotations"] if a.image_id == image_id]
        anns = _scale_annotations(anns, original, img.shape)
        labels = label_proposals(boxes, anns, config.label_overlap)
        coords = np.array([b.as_tuple() for b in boxes], dtype=np.int32).reshape(-1, 4)
        return (image_id, coords, labels, hists, totals, None)
    except (DataError, OSError, ValueError) as exc:
        return (_image_id(path), None, None, None, None, str(exc))


def _cmd_build_dataset(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    paths = _collect_images(args.images)
    annotations = load_annotations(args.annotations) if args.annotations else []
    vocab = load_vocabulary(args.vocab)

    _dataset_worker_init(args.vocab, config.to_dict(), args.annotations)
    if args.jobs > 1:
        with ProcessPoolExecutor(
            max_workers=args.jobs,
            initializer=_dataset_worker_init,
            initargs=(args.vocab, config.to_dict(), args.annotations),
        ) as pool:
            results = list(pool.map(_dataset_worker, paths))
    else:
        results = [_dataset_worker(p) for p in paths]

    ids: list[str] = []
    parts: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = []
    failures = 0
    for path, (image_id, coords, labels, hists, totals, err) in zip(paths, results):
        if err is not None:
            failures += 1
            print(f"warning: {path}: {err}", file=sys.stderr)
            continue
        if args.proposals_dir:
            os.makedirs(args.proposals_dir, exist_ok=True)
            write_proposals_csv(
                os.path.join(args.proposals_dir, f"{image_id}.csv"),
                [BoundingBox(*(int(v) for v in row)) for row in coords],
            )
        ids.extend([image_id] * len(labels))
        parts.append((coords, labels, hists, totals))
    if failures == len(paths):
        raise DataError("all images failed to process")
    dataset = ProposalDataset(
        image_ids=ids,
        boxes=np.vstack([p[0] for p in parts]) if parts else np.empty((0, 4), np.int32),
        labels=np.concatenate([p[1] for p in parts]) if parts else np.empty(0, np.int8),
        histograms=np.vstack([p[2] for p in parts])
        if parts
        else np.empty((0, vocab.size)),
        totals=np.concatenate([p[3] for p in parts]) if parts else np.empty(0, np.int32),
        vocab_sha256=vocab.file_sha256,
    )
    if args.balance:
        dataset = balance_dataset(dataset, config.seed)
    meta = {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "balanced": bool(args.balance),
    }
    save_dataset(args.out, dataset, meta)
    print(
        f"dataset entries={dataset.n} positive={dataset.positives} "
        f"negative={dataset.negatives} images={len(paths) - failures} -> {args.out}"
    )
    return 0


# ---------------------------------------------------------------------------
# train


def _whole_image_positives(
    paths: list[str], vocab, config: RunConfig
) -> ProposalDataset:
    ids = []
    boxes = []
    hists = []
    totals = []
    for path in paths:
        img, _ = _load_image(path, config)
        mask = metal_mask(img, config)
        feats = phow_extract(img, mask, config.phow_params())
        hist = bovw_histogram(feats.descriptors, vocab)
        ids.append(_image_id(path))
        h, w = img.shape
        boxes.append((0, 0, w - 1, h - 1))
        hists.append(hist.counts_normalized)
        totals.append(hist.total_descriptors)
    return ProposalDataset(
        image_ids=ids,
        boxes=np.array(boxes, dtype=np.int32).reshape(-1, 4),
        labels=np.ones(len(ids), dtype=np.int8),
        histograms=np.array(hists, dtype=np.float64).reshape(-1, vocab.size),
        totals=np.array(totals, dtype=np.int32),
        vocab_sha256=vocab.file_sha256,
    )


def _concat_datasets(a: ProposalDataset, b: ProposalDataset) -> ProposalDataset:
    return ProposalDataset(
        image_ids=a.image_ids + b.image_ids,
        boxes=np.vstack([a.boxes, b.boxes]),
        labels=np.concatenate([a.labels, b.labels]),
        histograms=np.vstack([a.histograms, b.histograms]),
        totals=np.concatenate([a.totals, b.totals]),
        vocab_sha256=a.vocab_sha256 or b.vocab_sha256,
        meta=a.meta,
    )


def _cmd_train(args: argparse.Namespace) -> int:
    config = _resolve_config(args, svm_lambda=getattr(args, "lambda_", None))
    vocab = load_vocabulary(args.vocab)
    if args.dataset:
        dataset = load_dataset(args.dataset)
        if (
            dataset.vocab_sha256
            and vocab.file_sha256
            and dataset.vocab_sha256 != vocab.file_sha256
        ):
            raise ArtifactMismatchError(
                "dataset was built against a different vocabulary"
            )
    elif args.images:
        annotations = load_annotations(args.annotations) if args.annotations else []
        loaded = []
        for path in _collect_images(args.images):
            img, _ = _load_image(path, config)
            loaded.append((_image_id(path), img))
        dataset = build_dataset(
            loaded,
            annotations,
            vocab,
            config,
            balance=False,
            vocab_sha256=vocab.file_sha256,
        )
    else:
        raise UsageError("train needs --dataset or --images")
    if args.positive_crops:
        crops = _whole_image_positives(
            _collect_images(args.positive_crops), vocab, config
        )
        dataset = _concat_datasets(dataset, crops)
    if args.balance:
        dataset = balance_dataset(dataset, config.seed)
    kernel = config.kernel_config()
    features = chi2_feature_map(dataset.histograms, kernel)
    labeled = LabeledSet(features, dataset.labels.astype(np.float64))
    model = svm_train(
        labeled,
        config.svm_lambda,
        max_epochs=config.svm_max_epochs,
        tol=config.svm_tol,
        seed=config.seed,
    )
    model.kernel = kernel
    model.vocab_sha256 = vocab.file_sha256
    objective = svm_objective(model.w, model.b, labeled.x, labeled.y, config.svm_lambda)
    meta = {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "positives": dataset.positives,
        "negatives": dataset.negatives,
        "objective": objective,
    }
    save_model(args.out, model, meta)
    print(
        f"model lambda={config.svm_lambda:g} positives={dataset.positives} "
        f"negatives={dataset.negatives} objective={objective:.8f} -> {args.out}"
    )
    return 0


# ---------------------------------------------------------------------------
# tune


def _dataset_features(dataset: ProposalDataset, model) -> np.ndarray:
    kernel = model.kernel
    if kernel is None:
        raise ArtifactMismatchError("model carries no kernel map configuration")
    features = chi2_feature_map(dataset.histograms, kernel)
    if features.shape[1] != model.dim:
        raise ArtifactMismatchError(
            f"feature dim {features.shape[1]} != model dim {model.dim}"
        )
    return features


def _cmd_tune(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    model = load_model(args.model)
    if (
        dataset.vocab_sha256
        and model.vocab_sha256
        and dataset.vocab_sha256 != model.vocab_sha256
    ):
        raise ArtifactMismatchError("dataset and model use different vocabularies")
    features = _dataset_features(dataset, model)
    scores = np.asarray(svm_score(model, features))
    curve = pr_curve(scores, dataset.labels)
    threshold = select_threshold_max_f1(curve)
    model.threshold = float(threshold)
    out = args.out or args.model
    save_model(out, model, meta={"tuned_on": os.path.basename(args.dataset)})
    point = next(p for p in curve.points if p.threshold == threshold)
    comment = f"model={os.path.basename(out)} tuned_on={os.path.basename(args.dataset)}"
    if args.curve_csv:
        write_pr_curve_csv(args.curve_csv, curve, header_comment=comment)
    if args.curve_fig:
        save_pr_curve_figure(
            args.curve_fig, curve, chosen_threshold=threshold, comment=comment
        )
    print(
        f"th_a={threshold!r} vpr={point.vpr:.4f} ppv={point.ppv:.4f} "
        f"f1={point.f1:.4f} -> {out}"
    )
    return 0


# ---------------------------------------------------------------------------
# detect


def _detect_worker_init(model_path: str, vocab_path: str, config_dict: dict) -> None:
    config_dict = dict(config_dict)
    config_dict["phow_scales"] = tuple(config_dict["phow_scales"])
    _WORKER["config"] = RunConfig(**config_dict)
    _WORKER["vocab"] = load_vocabulary(vocab_path)
    _WORKER["model"] = load_model(model_path)


def _detect_worker(path: str):
    config: RunConfig = _WORKER["config"]
    timings: dict[str, float] = {}
    try:
        img, original = _load_image(path, config)
        image_id = _image_id(path)
        detection = detect_pipeline(
            img,
            _WORKER["model"],
            _WORKER["vocab"],
            config,
            image_id=image_id,
            timings=timings,
        )
        if detection is not None and original != img.shape:
            detection = Detection(
                image_id=detection.image_id,
                bbox=_scale_box_up(detection.bbox, original, img.shape),
                score=detection.score,
                contributing_boxes=detection.contributing_boxes,
            )
        return (image_id, detection, timings, None)
    except (DataError, OSError, ValueError) as exc:
        return (_image_id(path), None, timings, str(exc))


def _cmd_detect(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    paths = _collect_images(args.images)
    vocab = load_vocabulary(args.vocab)
    model = load_model(args.model)
    kernel = config.kernel_config()
    check_compatibility(
        model, vocab.file_sha256, kernel, vocab.size * kernel.expansion
    )
    annotations = load_annotations(args.annotations) if args.annotations else []

    _detect_worker_init(args.model, args.vocab, config.to_dict())
    if args.jobs > 1:
        with ProcessPoolExecutor(
            max_workers=args.jobs,
            initializer=_detect_worker_init,
            initargs=(args.model, args.vocab, config.to_dict()),
        ) as pool:
            results = list(pool.map(_detect_worker, paths))
    else:
        results = [_detect_worker(p) for p in paths]

    records: list[tuple[str, Detection | None]] = []
    stage_totals: dict[str, float] = {}
    failures = 0
    for path, (image_id, detection, timings, err) in zip(paths, results):
        for key, value in timings.items():
            stage_totals[key] = stage_totals.get(key, 0.0) + value
        if err is not None:
            failures += 1
            print(f"warning: {path}: {err}", file=sys.stderr)
            continue
        records.append((image_id, detection))
        if args.overlay_dir:
            os.makedirs(args.overlay_dir, exist_ok=True)
            original_img = load_grayscale(path)
            anns = [a for a in annotations if a.image_id == image_id]
            save_overlay_png(
                os.path.join(args.overlay_dir, f"{image_id}.png"),
                original_img,
                anns,
                detection,
            )
    if failures == len(paths):
        raise DataError("all images failed to process")
    meta = {
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "model_sha256": model_sha256(args.model),
        "vocab_sha256": vocab.file_sha256,
    }
    write_detections_jsonl(args.out, records, meta)
    found = sum(1 for _, det in records if det is not None)
    stage_report = " ".join(
        f"{name}={stage_totals.get(name, 0.0):.2f}s"
        for name in ("proposals", "classification", "fusion")
    )
    print(
        f"detections {found}/{len(records)} images ({failures} failed) "
        f"{stage_report} -> {args.out}"
    )
    return 0


# ---------------------------------------------------------------------------
# eval


def _eval_proposals(args: argparse.Namespace, config: RunConfig) -> int:
    paths = _collect_images(args.images)
    annotations = load_annotations(args.annotations)
    if not annotations:
        raise DataError("no annotations to evaluate against")
    k_values = args.k_sweep or [config.ss_k]
    thresholds = args.pascal_thresholds or [0.4, 0.45, 0.5]
    images = []
    for path in paths:
        img, original = _load_image(path, config)
        images.append((_image_id(path), img, original))
    rows: list[tuple[float, float, float, float]] = []
    for k in k_values:
        per_image: dict[str, list[BoundingBox]] = {}
        for image_id, img, original in images:
            boxes = selective_search(
                img, k=k, sigma=config.ss_sigma, min_size=config.ss_min_size
            )
            per_image[image_id] = [
                _scale_box_up(b, original, img.shape) for b in boxes
            ]
        mbo = mean_best_overlap(per_image, annotations)
        for th in thresholds:
            rate = hit_rate(per_image, annotations, th)
            rows.append((float(k), float(th), rate, mbo))
            print(f"k={k:g} pascal={th:g} hit_rate={rate:.4f} mbo={mbo:.4f}")
    comment = _artifact_comment(config)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(f"# {comment}\n")
            handle.write("k,pascal_threshold,hit_rate,mean_best_overlap\n")
            for k, th, rate, mbo in rows:
                handle.write(f"{k!r},{th!r},{rate!r},{mbo!r}\n")
    if args.fig:
        save_proposal_sweep_figure(args.fig, rows, comment=comment)
    return 0


def _eval_classifier(args: argparse.Namespace, config: RunConfig) -> int:
    if not args.dataset or not args.model:
        raise UsageError("classifier mode needs --dataset and --model")
    dataset = load_dataset(args.dataset)
    model = load_model(args.model)
    if (
        dataset.vocab_sha256
        and model.vocab_sha256
        and dataset.vocab_sha256 != model.vocab_sha256
    ):
        raise ArtifactMismatchError("dataset and model use different vocabularies")
    features = _dataset_features(dataset, model)
    predictions = svm_classify(model, features)
    m = classification_metrics(predictions, dataset.labels)
    print(
        f"threshold={model.threshold!r} vpr={m.vpr:.4f} ppv={m.ppv:.4f} "
        f"f1={m.f1:.4f} error={m.error:.4f}"
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(f"# {_artifact_comment(config)}\n")
            handle.write("threshold,vpr,ppv,f1,error\n")
            handle.write(
                f"{model.threshold!r},{m.vpr!r},{m.ppv!r},{m.f1!r},{m.error!r}\n"
            )
    return 0


def _eval_detection(args: argparse.Namespace, config: RunConfig) -> int:
    if not args.detections or not args.annotations:
        raise UsageError("detection mode needs --detections and --annotations")
    _, results = read_detections_jsonl(args.detections)
    annotations = load_annotations(args.annotations)
    if not annotations:
        raise DataError("no annotations to evaluate against")
    detections = {image_id: det for image_id, det in results}
    annotated_ids = {ann.image_id for ann in annotations}
    missing = sorted(annotated_ids - set(detections))
    extra = sorted(set(detections) - annotated_ids)
    for image_id in missing:
        print(f"warning: no detection record for annotated image {image_id}", file=sys.stderr)
    for image_id in extra:
        print(f"note: detection for unannotated image {image_id}", file=sys.stderr)
    alpha = args.alpha
    localized = 0
    for ann in annotations:
        det = detections.get(ann.image_id)
        if det is not None and iou(det.bbox, ann.bbox) >= alpha:
            localized += 1
    rate = localized / len(annotations)
    print(
        f"alpha={alpha:g} localized={localized}/{len(annotations)} rate={rate:.4f}"
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(f"# {_artifact_comment(config)}\n")
            handle.write("alpha,localized,total,rate\n")
            handle.write(f"{alpha!r},{localized},{len(annotations)},{rate!r}\n")
    return 0


def _load_labeled(dataset_path: str, kernel) -> tuple[ProposalDataset, LabeledSet]:
    dataset = load_dataset(dataset_path)
    features = chi2_feature_map(dataset.histograms, kernel)
    return dataset, LabeledSet(features, dataset.labels.astype(np.float64))


def _eval_learning_curve(args: argparse.Namespace, config: RunConfig) -> int:
    if not (args.train and args.val and args.test):
        raise UsageError("learning-curve mode needs --train, --val, and --test")
    kernel = config.kernel_config()
    train_ds, train = _load_labeled(args.train, kernel)
    val_ds, val = _load_labeled(args.val, kernel)
    test_ds, test = _load_labeled(args.test, kernel)
    hashes = {
        d.vocab_sha256 for d in (train_ds, val_ds, test_ds) if d.vocab_sha256
    }
    if len(hashes) > 1:
        raise ArtifactMismatchError("datasets use different vocabularies")
    lambdas = args.lambdas or [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0]
    curve = learning_curve(
        train,
        val,
        test,
        lambdas,
        max_epochs=config.svm_max_epochs,
        tol=config.svm_tol,
        seed=config.seed,
    )
    for p in curve.points:
        print(
            f"lambda={p.lam:g} val_error={p.validation_error:.4f} "
            f"test_error={p.test_error:.4f}"
        )
    comment = _artifact_comment(config)
    if args.out:
        write_learning_curve_csv(args.out, curve, header_comment=comment)
    if args.fig:
        save_learning_curve_figure(args.fig, curve, comment=comment)
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    if args.mode == "proposals":
        return _eval_proposals(args, config)
    if args.mode == "classifier":
        return _eval_classifier(args, config)
    if args.mode == "detection":
        return _eval_detection(args, config)
    return _eval_learning_curve(args, config)


# ---------------------------------------------------------------------------
# parser assembly


def _float_list(raw: str) -> list[float]:
    try:
        return [float(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad number list {raw!r}") from exc


def build_parser() -> _Parser:
    parser = _Parser(prog="xbovw", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("build-vocab", help="cluster masked descriptors into a vocabulary")
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--mask-mode",
        choices=("metal", "metal-clean", "none"),
        default="metal",
        help="descriptor mask: dark pixels (default), cleaned dark pixels, or none",
    )
    p.add_argument("--vocab-size", type=int, dest="vocab_size")
    p.add_argument("--restarts", type=int)
    p.add_argument("--descriptor-cache", dest="descriptor_cache")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("build-dataset", help="encode and label selective-search windows")
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--annotations")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--balance", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--proposals-dir", dest="proposals_dir")
    p.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_build_dataset)

    p = sub.add_parser("train", help="train the classifier on a labeled dataset")
    p.add_argument("--dataset")
    p.add_argument("--images", nargs="*")
    p.add_argument("--annotations")
    p.add_argument("--positive-crops", nargs="*", dest="positive_crops")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda", type=float, dest="lambda_")
    p.add_argument("--balance", action=argparse.BooleanOptionalAction, default=True)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("tune", help="set the decision threshold from a validation set")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", help="default: rewrite the input model")
    p.add_argument("--curve-csv", dest="curve_csv")
    p.add_argument("--curve-fig", dest="curve_fig")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_tune)

    p = sub.add_parser("detect", help="run the detection pipeline over images")
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--annotations", help="ground truth for overlays")
    p.add_argument("--overlay-dir", dest="overlay_dir")
    p.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("eval", help="metrics over proposals, classifier, or detections")
    p.add_argument(
        "--mode",
        choices=("proposals", "classifier", "detection", "learning-curve"),
        required=True,
    )
    p.add_argument("--images", nargs="*")
    p.add_argument("--annotations")
    p.add_argument("--dataset")
    p.add_argument("--model")
    p.add_argument("--detections")
    p.add_argument("--train")
    p.add_argument("--val")
    p.add_argument("--test")
    p.add_argument("--alpha", type=float, default=0.4)
    p.add_argument("--k-sweep", type=_float_list, dest="k_sweep")
    p.add_argument(
        "--pascal-thresholds", type=_float_list, dest="pascal_thresholds"
    )
    p.add_argument("--lambdas", type=_float_list)
    p.add_argument("--out")
    p.add_argument("--fig")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a subcommand is required (see --help)")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, UndefinedMetricError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except ArtifactMismatchError as exc:
        print(f"artifact mismatch: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
