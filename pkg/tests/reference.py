"""Slow, structurally independent reference implementations used as oracles.

Everything here works on explicit python pixel sets and plain loops so the
fast array implementations in the package have something independent to agree
with. Kept deliberately naive.
"""

from __future__ import annotations

import math

import numpy as np


def pixel_sets(labels):
    """{instance id: set of (row, col)} for a label map."""
    out = {}
    h, w = labels.shape
    for r in range(h):
        for c in range(w):
            v = int(labels[r, c])
            if v > 0:
                out.setdefault(v, set()).add((r, c))
    return out


def iou_sets(a, b):
    union = len(a | b)
    return len(a & b) / union if union else None


def pq_reference(gt, pred):
    """(pq, tp, fp, fn) computed from the exhaustive IoU table."""
    gsets = pixel_sets(gt)
    psets = pixel_sets(pred)
    if not gsets and not psets:
        return 1.0, [], [], []
    tp = []
    for g in sorted(gsets):
        for p in sorted(psets):
            ov = iou_sets(gsets[g], psets[p])
            if ov is not None and ov > 0.5:
                tp.append((p, g, ov))
    matched_g = {g for _, g, _ in tp}
    matched_p = {p for p, _, _ in tp}
    assert len(matched_g) == len(tp) and len(matched_p) == len(tp), "matching not unique"
    fn = [g for g in sorted(gsets) if g not in matched_g]
    fp = [p for p in sorted(psets) if p not in matched_p]
    pq = sum(ov for _, _, ov in tp) / (len(tp) + 0.5 * len(fp) + 0.5 * len(fn))
    return pq, tp, fp, fn


def aji_reference(gt, pred):
    """Greedy aggregated Jaccard over explicit pixel sets.

    For every gt instance in ascending id order, every still-unused pred
    instance is evaluated; the best IoU wins, ties go to the lower pred id,
    zero-overlap gt instances claim nothing and contribute their own area.
    """
    gsets = pixel_sets(gt)
    psets = pixel_sets(pred)
    if not gsets and not psets:
        return 1.0
    used = set()
    num = 0
    den = 0
    for g in sorted(gsets):
        best_p, best_iou = None, 0.0
        for p in sorted(psets):
            if p in used:
                continue
            ov = len(gsets[g] & psets[p]) / len(gsets[g] | psets[p])
            if ov > best_iou:
                best_p, best_iou = p, ov
        if best_p is None:
            den += len(gsets[g])
        else:
            num += len(gsets[g] & psets[best_p])
            den += len(gsets[g] | psets[best_p])
            used.add(best_p)
    for p in sorted(psets):
        if p not in used:
            den += len(psets[p])
    return num / den


def disk_mask(shape, center, radius):
    """Boolean rasterized disk: pixels whose center lies within radius."""
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    return (yy - center[0]) ** 2 + (xx - center[1]) ** 2 <= radius**2


def random_label_map(rng, shape, max_instances):
    """Random blobby label map: nearest-seed regions with random erasure.

    May come out with fewer instances than requested, or none at all, which is
    exactly what the metric edge cases need.
    """
    n = int(rng.integers(0, max_instances + 1))
    labels = np.zeros(shape, np.int32)
    if n == 0:
        return labels
    seeds = np.stack(
        [rng.integers(0, shape[0], n), rng.integers(0, shape[1], n)], axis=1
    )
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    d = (yy[..., None] - seeds[:, 0]) ** 2 + (xx[..., None] - seeds[:, 1]) ** 2
    labels = np.argmin(d, axis=2).astype(np.int32) + 1
    labels[rng.random(shape) < 0.35] = 0
    return labels


def instance_length_reference(labels, instance_id):
    """Longest bbox side by raw pixel scanning."""
    rows = [r for r in range(labels.shape[0]) for c in range(labels.shape[1]) if labels[r, c] == instance_id]
    cols = [c for r in range(labels.shape[0]) for c in range(labels.shape[1]) if labels[r, c] == instance_id]
    if not rows:
        return None
    return max(max(rows) - min(rows) + 1, max(cols) - min(cols) + 1)


def attention_index_reference(labels, instance_id, thresholds):
    """Size-map index (1-based) for one instance, tie to the larger-size map."""
    length = instance_length_reference(labels, instance_id)
    rel = 100.0 * length / max(labels.shape)
    bounds = list(thresholds) + [0.0]
    for i in range(1, len(thresholds) + 1):
        if rel >= bounds[i]:
            return i
    return len(thresholds)


def euler_step_reference(flow, pos, n_steps, step):
    """Follow a flow field from pos with plain nearest-pixel sampling."""
    y, x = float(pos[0]), float(pos[1])
    h, w = flow.shape[1:]
    for _ in range(n_steps):
        r = min(max(int(round(y)), 0), h - 1)
        c = min(max(int(round(x)), 0), w - 1)
        y = min(max(y + step * flow[0, r, c], 0.0), h - 1.0)
        x = min(max(x + step * flow[1, r, c], 0.0), w - 1.0)
    return y, x


def median_center_reference(labels, instance_id):
    """Median center with nearest-pixel snapping, by exhaustive search."""
    pix = sorted(
        (r, c)
        for r in range(labels.shape[0])
        for c in range(labels.shape[1])
        if labels[r, c] == instance_id
    )
    rows = sorted(r for r, _ in pix)
    cols = sorted(c for _, c in pix)

    def med(v):
        k = len(v)
        return v[k // 2] if k % 2 else (v[k // 2 - 1] + v[k // 2]) / 2

    mr, mc = med(rows), med(cols)
    if (
        mr == int(mr)
        and mc == int(mc)
        and labels[int(mr), int(mc)] == instance_id
    ):
        return int(mr), int(mc)
    best = min(pix, key=lambda p: ((p[0] - mr) ** 2 + (p[1] - mc) ** 2, p[0], p[1]))
    return best


def equivalent_diameter(area):
    return 2.0 * math.sqrt(area / math.pi)
