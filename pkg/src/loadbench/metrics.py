"""Accuracy metrics for the four tasks and quality-target gating."""

from __future__ import annotations

import collections
import re
import string
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .rules import BenchmarkId, SEGMENTATION_CLASSES

# 0.50, 0.55, ..., 0.95 as exact decimal literals so IoU == threshold compares cleanly
COCO_IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
# k / 100 is correctly rounded; linspace is not, which matters when recall hits a point exactly
RECALL_POINTS = np.array([k / 100 for k in range(101)])


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class DetectionBox:
    xmin: float
    ymin: float
    xmax: float
    ymax: float
    class_id: int
    score: float = 1.0

    def __post_init__(self):
        if self.xmax < self.xmin or self.ymax < self.ymin:
            raise ValueError(f"degenerate box {self}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score out of range: {self.score}")

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def to_dict(self) -> dict:
        return {
            "xmin": self.xmin,
            "ymin": self.ymin,
            "xmax": self.xmax,
            "ymax": self.ymax,
            "class_id": self.class_id,
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionBox":
        return cls(
            float(d["xmin"]),
            float(d["ymin"]),
            float(d["xmax"]),
            float(d["ymax"]),
            int(d["class_id"]),
            float(d.get("score", 1.0)),
        )


class SegMask:
    """Grid of segmentation labels in [1, 32]."""

    def __init__(self, labels):
        arr = np.asarray(labels)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        if arr.size and (arr.min() < 1 or arr.max() > SEGMENTATION_CLASSES):
            raise ValueError(f"mask labels must lie in [1, {SEGMENTATION_CLASSES}]")
        self.labels = arr.astype(np.int64)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def __eq__(self, other):
        return isinstance(other, SegMask) and np.array_equal(self.labels, other.labels)

    def __repr__(self):
        return f"SegMask({self.height}x{self.width})"

    def to_rle(self) -> list[list[int]]:
        """Row-major run-length encoding as ``[label, run]`` pairs."""
        flat = self.labels.ravel()
        if flat.size == 0:
            return []
        change = np.flatnonzero(np.diff(flat)) + 1
        starts = np.concatenate(([0], change))
        runs = np.diff(np.concatenate((starts, [flat.size])))
        return [[int(flat[s]), int(r)] for s, r in zip(starts, runs)]

    @classmethod
    def from_rle(cls, rle, height: int, width: int) -> "SegMask":
        flat = np.concatenate(
            [np.full(run, label, dtype=np.int64) for label, run in rle]
        ) if rle else np.zeros(0, dtype=np.int64)
        if flat.size != height * width:
            raise ValueError("run-length encoding does not cover the mask")
        return cls(flat.reshape(height, width))


@dataclass(frozen=True)
class QualityTarget:
    """Minimum accuracy, as a fraction of the FP32 reference score.

    ``published_threshold`` pins the rounded value stated alongside the
    reference model, which takes precedence over the product when given.
    Scores are on the percent scale.
    """

    benchmark_id: BenchmarkId
    fp32_reference: float
    fraction: float
    published_threshold: float | None = None

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"fraction must be in (0, 1], got {self.fraction}")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")

    @property
    def threshold(self) -> float:
        if self.published_threshold is not None:
            return self.published_threshold
        # round away binary noise: 0.97 * 54.8 must equal the literal 53.156
        return round(self.fraction * self.fp32_reference, 9)


QUALITY_TARGETS: dict[BenchmarkId, QualityTarget] = {
    BenchmarkId.IMAGE_CLASSIFICATION: QualityTarget(
        BenchmarkId.IMAGE_CLASSIFICATION, 76.19, 0.98, published_threshold=74.66
    ),
    BenchmarkId.OBJECT_DETECTION: QualityTarget(
        BenchmarkId.OBJECT_DETECTION, 24.4, 0.93, published_threshold=22.7
    ),
    BenchmarkId.SEGMENTATION: QualityTarget(BenchmarkId.SEGMENTATION, 54.8, 0.97),
    BenchmarkId.QUESTION_ANSWERING: QualityTarget(
        BenchmarkId.QUESTION_ANSWERING, 93.98, 0.93
    ),
}

METRIC_NAMES = {
    BenchmarkId.IMAGE_CLASSIFICATION: "top1",
    BenchmarkId.OBJECT_DETECTION: "mAP",
    BenchmarkId.SEGMENTATION: "mIoU",
    BenchmarkId.QUESTION_ANSWERING: "F1",
}


@dataclass(frozen=True)
class MetricResult:
    benchmark_id: BenchmarkId
    value: float
    passed: bool
    threshold_used: float
    scale: str = "percent"
    metric: str = field(default="")


def top1_accuracy(predictions: Sequence[Sequence[float]], labels: Sequence[int]) -> float:
    if len(predictions) != len(labels):
        raise ValueError(
            f"{len(predictions)} predictions but {len(labels)} labels"
        )
    if not labels:
        raise ValueError("no samples")
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    correct = sum(int(np.argmax(scores)) == int(label) for scores, label in zip(predictions, labels))
    return correct / len(labels)


def box_iou(a: DetectionBox, b: DetectionBox) -> float:
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0 or ih <= 0:
        inter = 0.0
    else:
        inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def _average_precision(tp: np.ndarray, n_gt: int) -> float:
    """101-point interpolated AP from a score-ordered true-positive vector."""
    if tp.size == 0:
        return 0.0
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(1 - tp)
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)
    # precision envelope: best precision at any recall >= this one
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < recall.size, precision[np.minimum(idx, recall.size - 1)], 0.0)
    return float(sampled.mean())


def mean_average_precision(
    preds: Sequence[Sequence[DetectionBox]],
    gts: Sequence[Sequence[DetectionBox]],
    iou_thresholds: Sequence[float] = COCO_IOU_THRESHOLDS,
) -> float:
    """COCO-style mAP averaged over IoU thresholds and ground-truth classes.

    Predictions of a class are visited in descending score order (ties keep
    image then box order) and each claims the unmatched ground-truth box of
    that class in the same image with the highest IoU, provided the IoU
    reaches the threshold. Classes that never occur in the ground truth are
    ignored.
    """
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} prediction images but {len(gts)} ground-truth images")
    classes = sorted({box.class_id for image in gts for box in image})
    if not classes:
        raise UndefinedMetricError("no ground-truth boxes")

    per_threshold = []
    for thr in iou_thresholds:
        aps = []
        for cls in classes:
            gt_by_image = [[g for g in image if g.class_id == cls] for image in gts]
            n_gt = sum(len(g) for g in gt_by_image)
            dets = [
                (-box.score, img, k, box)
                for img, image in enumerate(preds)
                for k, box in enumerate(image)
                if box.class_id == cls
            ]
            dets.sort(key=lambda d: (d[0], d[1], d[2]))
            matched = [[False] * len(g) for g in gt_by_image]
            tp = np.zeros(len(dets))
            for i, (_, img, _, box) in enumerate(dets):
                best, best_iou = -1, thr
                for j, g in enumerate(gt_by_image[img]):
                    if matched[img][j]:
                        continue
                    iou = box_iou(box, g)
                    if iou >= best_iou and (best < 0 or iou > best_iou):
                        best, best_iou = j, iou
                if best >= 0:
                    matched[img][best] = True
                    tp[i] = 1
            aps.append(_average_precision(tp, n_gt))
        per_threshold.append(float(np.mean(aps)))
    return float(np.mean(per_threshold))


def confusion_matrix(pred: SegMask, gt: SegMask, n_classes: int = SEGMENTATION_CLASSES) -> np.ndarray:
    """Counts indexed [gt - 1, pred - 1] over pixels whose ground truth is scored."""
    if pred.labels.shape != gt.labels.shape:
        raise ValueError(f"shape mismatch {pred.labels.shape} vs {gt.labels.shape}")
    g = gt.labels.ravel()
    p = pred.labels.ravel()
    keep = g < n_classes
    idx = (g[keep] - 1) * n_classes + (p[keep] - 1)
    return np.bincount(idx, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def miou_from_confusion(conf: np.ndarray) -> float:
    n_scored = conf.shape[0] - 1
    tp = np.diag(conf)[:n_scored].astype(np.float64)
    gt_count = conf[:n_scored].sum(axis=1)
    pred_count = conf[:, :n_scored].sum(axis=0)
    present = gt_count > 0
    if not present.any():
        raise UndefinedMetricError("no ground-truth pixels in the scored classes")
    iou = tp[present] / (gt_count[present] + pred_count[present] - tp[present])
    return float(iou.mean())


def miou_filtered(preds: Sequence[SegMask], gts: Sequence[SegMask]) -> float:
    """Mean IoU over classes 1..31, counting only pixels whose ground truth is 1..31."""
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} prediction masks but {len(gts)} ground-truth masks")
    conf = np.zeros((SEGMENTATION_CLASSES, SEGMENTATION_CLASSES), dtype=np.int64)
    for p, g in zip(preds, gts):
        conf += confusion_matrix(p, g)
    return miou_from_confusion(conf)


def normalize_answer(s: str) -> str:
    """Lower text and remove punctuation, articles and extra whitespace."""
    s = s.lower()
    s = "".join(ch for ch in s if ch not in set(string.punctuation))
    s = re.sub(r"\b(a|an|the)\b", " ", s)
    return " ".join(s.split())


def _f1(prediction: str, reference: str) -> float:
    pred_tokens = normalize_answer(prediction).split()
    ref_tokens = normalize_answer(reference).split()
    if not pred_tokens and not ref_tokens:
        return 1.0
    common = collections.Counter(pred_tokens) & collections.Counter(ref_tokens)
    num_same = sum(common.values())
    if num_same == 0:
        return 0.0
    precision = num_same / len(pred_tokens)
    recall = num_same / len(ref_tokens)
    return 2 * precision * recall / (precision + recall)


def squad_f1(prediction: str, references: Sequence[str]) -> float:
    if not references:
        raise ValueError("at least one reference answer is required")
    return max(_f1(prediction, ref) for ref in references)


def evaluate_quality(value: float, target: QualityTarget) -> MetricResult:
    """Gate a percent-scale score against its target (inclusive)."""
    threshold = target.threshold
    return MetricResult(
        benchmark_id=target.benchmark_id,
        value=value,
        passed=value >= threshold,
        threshold_used=threshold,
        metric=METRIC_NAMES.get(BenchmarkId(target.benchmark_id), ""),
    )


def score_task(benchmark_id: BenchmarkId, payloads: Sequence, ground_truths: Sequence) -> float:
    """Task metric (as a fraction) over aligned prediction payloads and ground truths."""
    bid = BenchmarkId(benchmark_id)
    if bid is BenchmarkId.IMAGE_CLASSIFICATION:
        return top1_accuracy(payloads, ground_truths)
    if bid is BenchmarkId.OBJECT_DETECTION:
        return mean_average_precision(payloads, ground_truths)
    if bid is BenchmarkId.SEGMENTATION:
        return miou_filtered(payloads, ground_truths)
    if len(payloads) != len(ground_truths):
        raise ValueError(f"{len(payloads)} answers but {len(ground_truths)} reference sets")
    if not payloads:
        raise ValueError("no samples")
    return sum(squad_f1(p, refs) for p, refs in zip(payloads, ground_truths)) / len(payloads)
