"""Detection evaluation: IoU matching, count/area metrics, ROC sweeps.

Sensitivity is count-based (matched ground-truth objects over all
ground-truth objects at IoU >= 0.5). Specificity is area-based: the true
negative quantity is tissue area minus predicted and ground-truth areas,
so specificity = tn_area / (tn_area + fp_area). Macro averages are
unweighted per-slide means.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DomainError, EmptyTissue, NoEvaluableSlides
from .geometry import BBox, boxes_to_array
from .geometry import iou as _box_iou

DEFAULT_IOU_THRESHOLD = 0.5
DEFAULT_CONF_THRESHOLD = 0.25


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    return _box_iou(a, b)


@dataclass(frozen=True)
class MatchResult:
    tp_pairs: tuple  # ((detection index, gt index), ...)
    fp_indices: tuple  # detection indices, ascending
    fn_indices: tuple  # gt indices, ascending

    @property
    def tp(self) -> int:
        return len(self.tp_pairs)


def match_detections(dets, gts, iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> MatchResult:
    """Greedy one-to-one assignment of detections to ground truth.

    Detections are visited in descending confidence (ties: smaller x_min,
    then y_min) and take the unmatched ground-truth box of highest IoU >=
    iou_threshold (ties: lower gt index). Later hits on an already-matched
    box count as false positives; unmatched ground truth is a false
    negative. Indices refer to the input list positions.
    """
    if not 0 < iou_threshold <= 1:
        raise DomainError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    order = sorted(
        range(len(dets)),
        key=lambda i: (-dets[i].confidence, dets[i].bbox.x_min, dets[i].bbox.y_min),
    )
    iou_matrix = kernels.pairwise_iou(
        boxes_to_array([d.bbox for d in dets]),
        boxes_to_array([g.bbox for g in gts]),
    )
    gt_taken = np.zeros(len(gts), dtype=bool)
    tp_pairs = []
    fp = []
    for det_idx in order:
        row = iou_matrix[det_idx]
        best_gt = -1
        best_iou = 0.0
        for gt_idx in range(len(gts)):
            if gt_taken[gt_idx]:
                continue
            v = row[gt_idx]
            if v >= iou_threshold and v > best_iou:
                best_iou = v
                best_gt = gt_idx
        if best_gt >= 0:
            gt_taken[best_gt] = True
            tp_pairs.append((det_idx, best_gt))
        else:
            fp.append(det_idx)
    fn = [i for i in range(len(gts)) if not gt_taken[i]]
    return MatchResult(
        tp_pairs=tuple(tp_pairs),
        fp_indices=tuple(sorted(fp)),
        fn_indices=tuple(fn),
    )


def union_area(boxes) -> float:
    """Exact area of the union of the boxes, in level-0 px^2."""
    return kernels.union_area(boxes_to_array(list(boxes)))


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tissue_area: float
    gt_area: float
    fp_area: float
    tn_area: float
    sensitivity: float | None  # None when the slide has no ground truth
    specificity: float
    slide_id: str = ""


def evaluate_slide(
    dets,
    gts,
    tissue_area: float,
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    slide_id: str = "",
) -> MetricsReport:
    """Per-slide counts and areas at one confidence threshold.

    Detections below conf_threshold are discarded, the rest are matched
    one-to-one against ground truth. tn_area is the tissue area left after
    removing ground-truth and false-positive union areas (floored at 0).
    """
    if tissue_area <= 0:
        raise EmptyTissue(f"tissue_area must be positive, got {tissue_area}")
    kept = [d for d in dets if d.confidence >= conf_threshold]
    result = match_detections(kept, gts, iou_threshold)
    gt_area = union_area([g.bbox for g in gts])
    fp_area = union_area([kept[i].bbox for i in result.fp_indices])
    tn_area = max(0.0, tissue_area - gt_area - fp_area)
    tp = result.tp
    fn = len(result.fn_indices)
    sensitivity = tp / (tp + fn) if (tp + fn) > 0 else None
    denom = tn_area + fp_area
    specificity = tn_area / denom if denom > 0 else 1.0
    return MetricsReport(
        tp=tp,
        fp=len(result.fp_indices),
        fn=fn,
        tissue_area=float(tissue_area),
        gt_area=gt_area,
        fp_area=fp_area,
        tn_area=tn_area,
        sensitivity=sensitivity,
        specificity=specificity,
        slide_id=slide_id,
    )


def macro_average(reports) -> tuple:
    """Unweighted per-slide means: (avg_sensitivity, avg_specificity).

    Slides without ground truth are excluded from the sensitivity mean
    only; at least one evaluable slide is required.
    """
    reports = list(reports)
    if not reports:
        raise NoEvaluableSlides("no reports to average")
    sens = [r.sensitivity for r in reports if r.sensitivity is not None]
    if not sens:
        raise NoEvaluableSlides("no slide has ground-truth objects")
    avg_sens = sum(sens) / len(sens)
    avg_spec = sum(r.specificity for r in reports) / len(reports)
    return avg_sens, avg_spec


@dataclass(frozen=True)
class RocCurve:
    points: tuple  # ((confidence threshold, tpr, fpr), ...) thresholds descending
    label: str = ""

    def thresholds(self):
        return [p[0] for p in self.points]


def default_thresholds(count: int = 101) -> list:
    """Descending sweep from just above any confidence down to 0."""
    grid = np.linspace(1.0, 0.0, count)
    return [1.01] + [float(t) for t in grid]


def roc_curve(
    dets,
    gts,
    tissue_area: float,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    thresholds=None,
    label: str = "",
) -> RocCurve:
    """Sweep the confidence threshold; tpr = sensitivity, fpr = 1 - specificity."""
    if len(gts) == 0:
        raise NoEvaluableSlides("ROC needs at least one ground-truth object")
    if thresholds is None:
        thresholds = default_thresholds()
    thresholds = [float(t) for t in thresholds]
    if any(not np.isfinite(t) or t < 0 for t in thresholds):
        raise DomainError("thresholds must be finite and >= 0")
    if any(a <= b for a, b in zip(thresholds, thresholds[1:])):
        raise DomainError("thresholds must be strictly descending")
    points = []
    for t in thresholds:
        report = evaluate_slide(dets, gts, tissue_area, conf_threshold=t,
                                iou_threshold=iou_threshold)
        points.append((t, report.sensitivity, 1.0 - report.specificity))
    return RocCurve(points=tuple(points), label=label)


def macro_roc(slides, iou_threshold: float = DEFAULT_IOU_THRESHOLD,
              thresholds=None, label: str = "") -> RocCurve:
    """Average per-slide ROC over (dets, gts, tissue_area) triples.

    tpr is averaged over slides with ground truth, fpr over all slides,
    mirroring macro_average.
    """
    slides = list(slides)
    if thresholds is None:
        thresholds = default_thresholds()
    curves = []
    fprs = []
    for dets, gts, tissue_area in slides:
        if len(gts) > 0:
            curves.append(roc_curve(dets, gts, tissue_area, iou_threshold, thresholds))
        else:
            fprs.append([
                1.0 - evaluate_slide(dets, gts, tissue_area, conf_threshold=t,
                                     iou_threshold=iou_threshold).specificity
                for t in thresholds
            ])
    if not curves:
        raise NoEvaluableSlides("no slide has ground-truth objects")
    points = []
    for k, t in enumerate(thresholds):
        tpr = sum(c.points[k][1] for c in curves) / len(curves)
        all_fpr = [c.points[k][2] for c in curves] + [f[k] for f in fprs]
        fpr = sum(all_fpr) / len(all_fpr)
        points.append((float(t), tpr, fpr))
    return RocCurve(points=tuple(points), label=label)
