"""Small shared helpers for integer instance label maps."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ShapeMismatch


def check_label_map(labels: np.ndarray) -> np.ndarray:
    if labels.ndim != 2 or not np.issubdtype(labels.dtype, np.integer):
        raise ShapeMismatch("label map must be a 2-D integer array")
    return labels


def instance_ids(labels: np.ndarray) -> np.ndarray:
    """Sorted nonzero instance ids present in the map."""
    ids = np.unique(labels)
    return ids[ids > 0]


def instance_areas(labels: np.ndarray) -> dict[int, int]:
    """Pixel counts keyed by instance id."""
    ids, counts = np.unique(labels, return_counts=True)
    return {int(i): int(c) for i, c in zip(ids, counts) if i > 0}


def instance_bboxes(labels: np.ndarray) -> dict[int, tuple[int, int, int, int]]:
    """Bounding boxes (top, left, height, width) keyed by instance id."""
    out: dict[int, tuple[int, int, int, int]] = {}
    if labels.size == 0:
        return out
    for idx, sl in enumerate(ndimage.find_objects(labels)):
        if sl is None:
            continue
        rs, cs = sl
        out[idx + 1] = (rs.start, cs.start, rs.stop - rs.start, cs.stop - cs.start)
    return out


def bbox_lengths(labels: np.ndarray) -> dict[int, int]:
    """Longest bounding-box side in pixels, keyed by instance id."""
    return {i: max(h, w) for i, (_, _, h, w) in instance_bboxes(labels).items()}


def validate_connectivity(labels: np.ndarray) -> None:
    """Raise if any instance is not 4-connected.

    Meant for external inputs at the IO boundary; internally produced ground
    truth enforces this by construction.
    """
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], bool)
    for i, (top, left, h, w) in instance_bboxes(labels).items():
        mask = labels[top : top + h, left : left + w] == i
        _, n = ndimage.label(mask, structure=structure)
        if n != 1:
            raise ValueError(f"instance {i} is not 4-connected ({n} components)")
