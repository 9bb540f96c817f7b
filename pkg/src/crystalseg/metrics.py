"""Instance segmentation and size-measurement metrics.

All metrics operate on 2-D integer label maps where 0 is background and each
positive id is one instance. Instance matching follows the panoptic scheme:
a gt/pred pair matches when its IoU exceeds 0.5, which makes the matching
unique without any assignment search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._labelops import bbox_lengths, check_label_map, instance_areas
from .errors import EmptyInstance, EmptyLabelMap, EmptyOperands, ShapeMismatch

IOU_MATCH_THRESHOLD = 0.5
HOMOGENEITY_SPLIT = 0.1


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean pixel masks.

    Raises
    ------
    EmptyOperands
        If both masks are empty (the ratio is undefined).
    """
    a = np.asarray(a, bool)
    b = np.asarray(b, bool)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        raise EmptyOperands("IoU of two empty masks is undefined")
    return np.count_nonzero(a & b) / union


def _pairwise_intersections(gt: np.ndarray, pred: np.ndarray):
    """Sparse intersection counts {(gt_id, pred_id): pixels} for id pairs > 0."""
    both = (gt > 0) & (pred > 0)
    if not both.any():
        return {}
    g = gt[both].astype(np.int64)
    p = pred[both].astype(np.int64)
    # Encode pairs into single ints; pred ids fit well under 2**31.
    stride = int(p.max()) + 1
    codes, counts = np.unique(g * stride + p, return_counts=True)
    return {
        (int(c // stride), int(c % stride)): int(n) for c, n in zip(codes, counts)
    }


@dataclass
class MatchResult:
    """Outcome of IoU>0.5 matching between a gt and a pred label map.

    tp holds (pred id, gt id, IoU) triples; fp the unmatched pred ids; fn the
    unmatched gt ids.
    """

    tp: list[tuple[int, int, float]] = field(default_factory=list)
    fp: list[int] = field(default_factory=list)
    fn: list[int] = field(default_factory=list)


def panoptic_quality(gt: np.ndarray, pred: np.ndarray) -> tuple[float, MatchResult]:
    """Panoptic quality with IoU>0.5 matching.

    PQ = sum of matched IoUs / (|TP| + 0.5 |FP| + 0.5 |FN|). Two empty maps
    score 1.0 by definition.
    """
    check_label_map(gt)
    check_label_map(pred)
    if gt.shape != pred.shape:
        raise ShapeMismatch(f"label map shapes differ: {gt.shape} vs {pred.shape}")

    gt_areas = instance_areas(gt)
    pred_areas = instance_areas(pred)
    if not gt_areas and not pred_areas:
        return 1.0, MatchResult()

    tp = []
    matched_gt: set[int] = set()
    matched_pred: set[int] = set()
    for (g, p), inter in sorted(_pairwise_intersections(gt, pred).items()):
        pair_iou = inter / (gt_areas[g] + pred_areas[p] - inter)
        if pair_iou > IOU_MATCH_THRESHOLD:
            tp.append((p, g, pair_iou))
            matched_gt.add(g)
            matched_pred.add(p)

    fn = [g for g in sorted(gt_areas) if g not in matched_gt]
    fp = [p for p in sorted(pred_areas) if p not in matched_pred]
    pq = sum(m[2] for m in tp) / (len(tp) + 0.5 * len(fp) + 0.5 * len(fn))
    return pq, MatchResult(tp=tp, fp=fp, fn=fn)


def aggregated_jaccard(gt: np.ndarray, pred: np.ndarray) -> float:
    """Aggregated Jaccard index (greedy per-gt best-IoU matching).

    Each gt instance, in ascending id order, claims the not-yet-used pred
    instance with the highest IoU (ties go to the lower pred id); the pair's
    intersection and union accumulate into the ratio. A gt instance with no
    overlapping unused pred contributes its own area to the denominator, as do
    the pixels of every pred instance left unclaimed at the end.
    """
    check_label_map(gt)
    check_label_map(pred)
    if gt.shape != pred.shape:
        raise ShapeMismatch(f"label map shapes differ: {gt.shape} vs {pred.shape}")

    gt_areas = instance_areas(gt)
    pred_areas = instance_areas(pred)
    if not gt_areas and not pred_areas:
        return 1.0

    inter = _pairwise_intersections(gt, pred)
    overlaps: dict[int, list[int]] = {}
    for g, p in inter:
        overlaps.setdefault(g, []).append(p)

    used: set[int] = set()
    num = 0
    den = 0
    for g in sorted(gt_areas):
        best_p = None
        best_iou = 0.0
        for p in sorted(overlaps.get(g, [])):
            if p in used:
                continue
            n = inter[(g, p)]
            pair_iou = n / (gt_areas[g] + pred_areas[p] - n)
            if pair_iou > best_iou:
                best_iou = pair_iou
                best_p = p
        if best_p is None:
            den += gt_areas[g]
        else:
            n = inter[(g, best_p)]
            num += n
            den += gt_areas[g] + pred_areas[best_p] - n
            used.add(best_p)
    for p, area in pred_areas.items():
        if p not in used:
            den += area
    return num / den


def crystal_size(area: float) -> float:
    """Equivalent-disk diameter of an instance area: 2 * sqrt(area / pi)."""
    if area <= 0:
        raise EmptyInstance("instance area must be positive")
    return 2.0 * math.sqrt(area / math.pi)


def acs(labels: np.ndarray) -> float:
    """Average crystal size: mean equivalent-disk diameter over instances."""
    check_label_map(labels)
    areas = instance_areas(labels)
    if not areas:
        raise EmptyLabelMap("no instances to average")
    return float(np.mean([crystal_size(a) for a in areas.values()]))


def size_errors(gt: np.ndarray, pred: np.ndarray) -> tuple[float, float]:
    """(MAE, MRE) of average crystal size; an empty prediction counts as 0."""
    gt_acs = acs(gt)
    try:
        pred_acs = acs(pred)
    except EmptyLabelMap:
        pred_acs = 0.0
    mae = abs(gt_acs - pred_acs)
    return mae, mae / gt_acs


def homogeneity_and_class(
    labels: np.ndarray, patch_size: int = 224
) -> tuple[float, int]:
    """Size-homogeneity score and difficulty class of a label map.

    The score is the ratio of the smallest to the largest crystal length
    (longest bbox side), in (0, 1]. Class 1: every crystal is shorter than
    patch_size. Class 2: score below 0.1. Class 3: the rest.
    """
    check_label_map(labels)
    lengths = bbox_lengths(labels)
    if not lengths:
        raise EmptyLabelMap("no instances to classify")
    longest = max(lengths.values())
    score = min(lengths.values()) / longest
    if longest < patch_size:
        cls = 1
    elif score < HOMOGENEITY_SPLIT:
        cls = 2
    else:
        cls = 3
    return score, cls
