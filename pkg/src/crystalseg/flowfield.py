"""Ground-truth flow fields from instance label maps.

Each instance gets a simulated heat diffusion: a unit source dripped onto the
instance's median center, smoothed by a mask-restricted 4-neighbor average.
The flow is the unit-normalized spatial gradient of the converged field, so
every foreground vector points toward the instance center. Instances never
see each other; diffusion is masked per instance.

A flow field is an array of shape (2, h, w), float32, channel 0 = dy,
channel 1 = dx. The foreground map is (h, w) float32 in [0, 1].
"""

from __future__ import annotations

import math

import numpy as np

from ._kernels import diffuse, masked_unit_gradient
from ._labelops import check_label_map, instance_bboxes
from .errors import NoSuchInstance

NORM_EPS = 1e-12
MIN_DIFFUSION_ITERS = 20


def _median_center_of_mask(mask: np.ndarray) -> tuple[int, int]:
    rows, cols = np.nonzero(mask)
    mr = float(np.median(rows))
    mc = float(np.median(cols))
    if mr.is_integer() and mc.is_integer() and mask[int(mr), int(mc)]:
        return int(mr), int(mc)
    # snap to the nearest instance pixel; np.nonzero order is row-major, so
    # the first minimizer is already the (row, col)-smallest tie-break
    d2 = (rows - mr) ** 2 + (cols - mc) ** 2
    k = int(np.argmin(d2))
    return int(rows[k]), int(cols[k])


def median_center(labels: np.ndarray, instance_id: int) -> tuple[int, int]:
    """Median-coordinate center of one instance, snapped onto the instance.

    The per-axis median may fall outside a non-convex instance (or between
    pixels); in that case the nearest instance pixel wins, ties broken by
    smallest row then smallest column.
    """
    check_label_map(labels)
    mask = labels == instance_id
    if instance_id <= 0 or not mask.any():
        raise NoSuchInstance(f"no instance with id {instance_id}")
    return _median_center_of_mask(mask)


def diffusion_iterations(bbox_h: int, bbox_w: int) -> int:
    """Iteration budget: twice the bbox diagonal, floor of 20."""
    return max(MIN_DIFFUSION_ITERS, math.ceil(2.0 * math.hypot(bbox_h, bbox_w)))


def compute_flow(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Center-pointing unit flow field and binary foreground map.

    Parameters
    ----------
    labels : 2-D integer array, 0 = background.

    Returns
    -------
    flow : float32 array (2, h, w), unit vectors on foreground (zero at pixels
        with no gradient, e.g. the center), zero on background.
    fg : float32 array (h, w), 1.0 on instance pixels.

    Instances are processed independently on their bounding-box crops and
    write disjoint pixels, so the output does not depend on processing order
    or on the instance ids themselves.
    """
    check_label_map(labels)
    h, w = labels.shape
    flow = np.zeros((2, h, w), np.float32)
    fg = (labels > 0).astype(np.float32)
    for inst_id, (top, left, bh, bw) in sorted(instance_bboxes(labels).items()):
        crop = labels[top : top + bh, left : left + bw]
        mask = crop == inst_id
        cr, cc = _median_center_of_mask(mask)
        heat = diffuse(mask, cr, cc, diffusion_iterations(bh, bw))
        # Normalized gradient direction is invariant under log, but the heat
        # tail of elongated instances decays below float resolution while its
        # log stays well conditioned, so differentiate the log field.
        gy, gx = masked_unit_gradient(np.log(heat + 1e-300), mask)
        flow[0, top : top + bh, left : left + bw][mask] = gy[mask]
        flow[1, top : top + bh, left : left + bw][mask] = gx[mask]
    return flow, fg
