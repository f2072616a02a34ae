"""Detection evaluation: IoU, greedy matching, PR curves, AP and mAP.

Matching follows the de facto convention compatible with the TP/FP/FN
definitions: detections are visited in descending confidence (ties keep input
order), each one claims the highest-IoU still-unmatched ground truth of its
class if that IoU clears the threshold, and ground truths are single-use.

AP integrates the all-points interpolated precision envelope: the precision
credited at recall r is the maximum precision achieved at any recall >= r.
A 101-point interpolation is available as a cross-check variant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

Box = tuple[float, float, float, float]

DEFAULT_THRESHOLD_RANGE = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


def _check_box(box: Box) -> None:
    x_min, y_min, x_max, y_max = box
    if not (x_max > x_min and y_max > y_min):
        raise ValueError(f"degenerate box {box}: max coordinates must exceed min")


@dataclass
class DetectionBox:
    class_id: int
    confidence: float
    box: Box

    def __post_init__(self):
        _check_box(self.box)
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass
class GroundTruthBox:
    class_id: int
    box: Box
    matched: bool = False  # per-evaluation state; reset by match_detections

    def __post_init__(self):
        _check_box(self.box)


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two axis-aligned boxes, in [0, 1]."""
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


@dataclass
class MatchResult:
    order: list[int]          # detection indices, confidence-descending
    labels: list[bool]        # True = TP, aligned with ``order``
    confidences: list[float]  # aligned with ``order``
    fn_count: int

    @property
    def tp(self) -> int:
        return sum(self.labels)

    @property
    def fp(self) -> int:
        return len(self.labels) - self.tp


def sort_by_confidence(dets: Sequence[DetectionBox]) -> list[int]:
    """Indices in descending confidence; equal confidences keep input order."""
    return sorted(range(len(dets)), key=lambda i: -dets[i].confidence)


def match_detections(dets: Sequence[DetectionBox], gts: Sequence[GroundTruthBox],
                     iou_threshold: float) -> MatchResult:
    """Greedily label each detection TP/FP against single-use ground truths.

    All inputs must share one class. Unmatched ground truths count as FN.
    """
    classes = {d.class_id for d in dets} | {g.class_id for g in gts}
    if len(classes) > 1:
        raise ValueError(f"match_detections expects a single class, got {sorted(classes)}")
    for g in gts:
        g.matched = False
    order = sort_by_confidence(dets)
    labels: list[bool] = []
    for i in order:
        best_iou = 0.0
        best_gt = None
        for g in gts:
            if g.matched:
                continue
            v = iou(dets[i].box, g.box)
            if v > best_iou:
                best_iou = v
                best_gt = g
        if best_gt is not None and best_iou >= iou_threshold:
            best_gt.matched = True
            labels.append(True)
        else:
            labels.append(False)
    fn = sum(1 for g in gts if not g.matched)
    return MatchResult(order, labels, [dets[i].confidence for i in order], fn)


@dataclass
class PrCurve:
    """Cumulative (recall, precision) points at descending confidence cuts."""

    recalls: list[float] = field(default_factory=list)
    precisions: list[float] = field(default_factory=list)
    thresholds: list[float] = field(default_factory=list)
    n_gt: int = 0


def pr_curve(labels: Sequence[bool], confidences: Sequence[float], n_gt: int) -> PrCurve:
    if len(labels) != len(confidences):
        raise ValueError("labels and confidences must align")
    if n_gt < 0:
        raise ValueError("n_gt must be >= 0")
    order = sorted(range(len(labels)), key=lambda i: -confidences[i])
    curve = PrCurve(n_gt=n_gt)
    tp = fp = 0
    for i in order:
        tp += 1 if labels[i] else 0
        fp += 0 if labels[i] else 1
        curve.precisions.append(tp / (tp + fp))
        curve.recalls.append(tp / n_gt if n_gt else 0.0)
        curve.thresholds.append(confidences[i])
    return curve


def average_precision(curve: PrCurve, interpolation: str = "all_points") -> float:
    """Area under the interpolated precision envelope.

    With no ground truths (and hence no attainable recall) AP is defined as 0.
    """
    if interpolation not in ("all_points", "101point"):
        raise ValueError(f"unknown interpolation {interpolation!r}")
    if curve.n_gt == 0 or not curve.recalls:
        return 0.0
    rec = np.asarray(curve.recalls, dtype=np.float64)
    pre = np.asarray(curve.precisions, dtype=np.float64)
    if interpolation == "101point":
        total = 0.0
        for r in np.linspace(0.0, 1.0, 101):
            mask = rec >= r - 1e-12
            total += float(pre[mask].max()) if mask.any() else 0.0
        return total / 101.0
    mrec = np.concatenate([[0.0], rec])
    mpre = np.concatenate([pre, [0.0]])
    env = np.maximum.accumulate(mpre[::-1])[::-1]  # env[i] = max precision at recall >= rec[i]
    ap = 0.0
    for i in range(len(rec)):
        ap += (mrec[i + 1] - mrec[i]) * env[i]
    return float(ap)


def mean_ap(per_class_ap: Mapping[int, float] | Sequence[float]) -> float:
    values = list(per_class_ap.values()) if isinstance(per_class_ap, Mapping) else list(per_class_ap)
    if not values:
        raise ValueError("mean_ap: no classes to average")
    return float(sum(values) / len(values))


def evaluate_classes(dets: Sequence[DetectionBox], gts: Sequence[GroundTruthBox],
                     iou_threshold: float, interpolation: str = "all_points") -> dict[int, float]:
    """Per-class AP at one IoU threshold.

    The class universe is every class appearing in either input; classes with
    zero ground truths and zero detections cannot appear and are thus excluded
    from the average by construction.
    """
    classes = sorted({d.class_id for d in dets} | {g.class_id for g in gts})
    result: dict[int, float] = {}
    for cls in classes:
        cls_dets = [d for d in dets if d.class_id == cls]
        cls_gts = [g for g in gts if g.class_id == cls]
        match = match_detections(cls_dets, cls_gts, iou_threshold)
        curve = pr_curve(match.labels, match.confidences, len(cls_gts))
        result[cls] = average_precision(curve, interpolation)
    return result


def map_at(dets: Sequence[DetectionBox], gts: Sequence[GroundTruthBox],
           iou_threshold: float, interpolation: str = "all_points") -> float:
    return mean_ap(evaluate_classes(dets, gts, iou_threshold, interpolation))


def map_range(dets: Sequence[DetectionBox], gts: Sequence[GroundTruthBox],
              thresholds: Iterable[float] = DEFAULT_THRESHOLD_RANGE,
              interpolation: str = "all_points") -> float:
    """Mean of mAP over an IoU-threshold sweep (default 0.50:0.05:0.95)."""
    thresholds = list(thresholds)
    if not thresholds:
        raise ValueError("map_range: at least one threshold required")
    return float(sum(map_at(dets, gts, t, interpolation) for t in thresholds) / len(thresholds))
