"""Handgun detection in grayscale X-ray baggage scans.

Selective-search region proposals are encoded as bag-of-visual-words
histograms over a metallic SIFT vocabulary, lifted with an additive
chi-squared kernel feature map, and classified by a ridge-trained linear
model. A fusion step turns surviving boxes into one detection per image.
"""

from .boxes import BoundingBox
from .config import RunConfig, load_config_values, make_config
from .detect import (
    Detection,
    ProposalDataset,
    build_dataset,
    classify_boxes,
    detect_pipeline,
    label_proposals,
    merge_boxes,
    remove_outliers,
)
from .encode import (
    Histogram,
    KernelMapConfig,
    assign_hard,
    bovw_histogram,
    chi2_feature_map,
)
from .errors import ArtifactMismatchError, DataError, UndefinedMetricError, UsageError
from .image import (
    gaussian_blur,
    load_grayscale,
    reject_small_regions,
    save_grayscale,
    threshold_mask,
)
from .metrics import (
    Annotation,
    ClassificationMetrics,
    LearningCurve,
    PRCurve,
    classification_metrics,
    hit_rate,
    iou,
    learning_curve,
    mean_best_overlap,
    pr_curve,
    select_threshold_max_f1,
)
from .phow import Keypoint, PhowParams, dense_grid, phow_extract, sift_descriptor
from .proposals import Region, region_stats, selective_search, similarity
from .segmentation import Segmentation, felzenszwalb_segment
from .svm import LabeledSet, SvmModel, svm_classify, svm_score, svm_train
from .vocab import Vocabulary, build_vocabulary, kmeans

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "ArtifactMismatchError",
    "BoundingBox",
    "ClassificationMetrics",
    "DataError",
    "Detection",
    "Histogram",
    "Keypoint",
    "KernelMapConfig",
    "LabeledSet",
    "LearningCurve",
    "PRCurve",
    "PhowParams",
    "ProposalDataset",
    "Region",
    "RunConfig",
    "Segmentation",
    "SvmModel",
    "UndefinedMetricError",
    "UsageError",
    "Vocabulary",
    "assign_hard",
    "bovw_histogram",
    "build_dataset",
    "build_vocabulary",
    "chi2_feature_map",
    "classification_metrics",
    "classify_boxes",
    "dense_grid",
    "detect_pipeline",
    "felzenszwalb_segment",
    "gaussian_blur",
    "hit_rate",
    "iou",
    "kmeans",
    "label_proposals",
    "learning_curve",
    "load_config_values",
    "load_grayscale",
    "make_config",
    "mean_best_overlap",
    "merge_boxes",
    "phow_extract",
    "pr_curve",
    "region_stats",
    "reject_small_regions",
    "remove_outliers",
    "save_grayscale",
    "select_threshold_max_f1",
    "selective_search",
    "sift_descriptor",
    "similarity",
    "svm_classify",
    "svm_score",
    "svm_train",
    "threshold_mask",
]
