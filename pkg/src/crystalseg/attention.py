"""Size-level attention maps for scale fusion.

Each instance is routed to one of N size levels by its relative bounding-box
length; level 1 holds the largest crystals and level N the smallest, with one
extra map marking background. Ground-truth stacks are binary partitions of
the image; predicted stacks are normalized so the per-pixel fusion weights
sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._labelops import check_label_map, instance_bboxes
from .errors import BadThresholds, NoSuchInstance

DEFAULT_THRESHOLDS = (100.0, 50.0, 25.0, 12.5)
NORMALIZE_EPS = 1e-6


@dataclass(frozen=True)
class CrystalLength:
    """Longest bounding-box side of one instance, absolute and relative."""

    length: int
    relative: float


@dataclass(frozen=True)
class AttentionStack:
    """N size-level weight maps plus one background map, with the length
    thresholds (percent of the larger image dimension) that defined them."""

    maps: np.ndarray
    thresholds: tuple[float, ...]

    def __post_init__(self):
        if self.maps.ndim != 3 or self.maps.shape[0] != len(self.thresholds) + 1:
            raise BadThresholds(
                f"{self.maps.shape[0]} maps do not fit {len(self.thresholds)} thresholds"
            )

    @property
    def n_levels(self) -> int:
        return len(self.thresholds)


def validate_thresholds(t: Sequence[float]) -> tuple[float, ...]:
    t = tuple(float(v) for v in t)
    if not t:
        raise BadThresholds("threshold list is empty")
    if t[0] != 100.0:
        raise BadThresholds("first threshold must be 100")
    if any(b >= a for a, b in zip(t, t[1:])):
        raise BadThresholds("thresholds must be strictly decreasing")
    if t[-1] <= 0:
        raise BadThresholds("thresholds must stay positive")
    return t


def crystal_length(labels: np.ndarray, instance_id: int) -> CrystalLength:
    """Longest side of the instance's tight bounding box, plus the same
    length as a percentage of the larger image dimension."""
    check_label_map(labels)
    boxes = instance_bboxes(labels)
    if instance_id not in boxes:
        raise NoSuchInstance(f"instance {instance_id} not in label map")
    _, _, bh, bw = boxes[instance_id]
    length = max(bh, bw)
    return CrystalLength(length, 100.0 * length / max(labels.shape))


def size_level(relative_length: float, t: Sequence[float]) -> int:
    """1-based size-level index for a relative length. An instance lands on
    the first level whose lower bound it reaches, so a length exactly at a
    threshold joins the larger-size level."""
    bounds = list(t[1:]) + [0.0]
    for i, lo in enumerate(bounds, 1):
        if relative_length >= lo:
            return i
    return len(bounds)


def gt_attention(
    labels: np.ndarray, t: Sequence[float] = DEFAULT_THRESHOLDS
) -> AttentionStack:
    """Binary attention stack from an instance label map: every instance's
    pixels are 1 in exactly one size-level map, background pixels are 1 in
    the final map."""
    t = validate_thresholds(t)
    check_label_map(labels)
    n = len(t)
    maps = np.zeros((n + 1, *labels.shape), np.float32)
    denom = max(labels.shape)
    for inst_id, (_, _, bh, bw) in instance_bboxes(labels).items():
        rel = 100.0 * max(bh, bw) / denom
        maps[size_level(rel, t) - 1][labels == inst_id] = 1.0
    maps[n][labels == 0] = 1.0
    return AttentionStack(maps, t)


def normalize_stack(stack: AttentionStack) -> AttentionStack:
    """Scale the N size-level maps so they sum to 1 per pixel; pixels where
    the predictor put (near) zero weight everywhere fall back to uniform 1/N.
    The background map is not a fusion weight and passes through unchanged."""
    n = stack.n_levels
    fg = stack.maps[:n].astype(np.float64)
    total = fg.sum(axis=0)
    ok = total > NORMALIZE_EPS
    out = np.empty_like(fg)
    out[:, ok] = fg[:, ok] / total[ok]
    out[:, ~ok] = 1.0 / n
    maps = np.concatenate([out.astype(np.float32), stack.maps[n:][:1]])
    return AttentionStack(maps, stack.thresholds)
