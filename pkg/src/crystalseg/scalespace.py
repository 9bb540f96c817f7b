"""Resize scheduling, flow/foreground resampling, tiling, and stitching.

Images are processed at several resize factors; each resized image is cut
into overlapping square patches, per-patch predictions are blended back with
a sigmoidal taper so patch borders do not imprint seams, and coarse-scale
outputs are resampled to the original resolution for fusion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import cv2
import numpy as np

from .errors import BadRect, BadSchedule, ShapeMismatch

FLOW_RENORM_THRESHOLD = 0.1
TAPER_SOFT_WIDTH = 4.0
TAPER_SLOPE = 2.0
TAPER_FLOOR = 0.02


@dataclass(frozen=True)
class ResizeSchedule:
    """Ascending resize factors ending at 1.0 plus the square patch size."""

    factors: tuple[float, ...]
    patch_size: int = 224

    def __post_init__(self):
        if not self.factors:
            raise BadSchedule("schedule needs at least one factor")
        if any(not 0.0 < f <= 1.0 for f in self.factors):
            raise BadSchedule("factors must lie in (0, 1]")
        if self.factors[-1] != 1.0:
            raise BadSchedule("schedule must end at factor 1.0")
        if any(b <= a for a, b in zip(self.factors, self.factors[1:])):
            raise BadSchedule("factors must be strictly increasing")
        if self.patch_size < 32:
            raise BadSchedule("patch_size must be >= 32")

    def __len__(self) -> int:
        return len(self.factors)


class Rect(NamedTuple):
    top: int
    left: int
    height: int
    width: int


def build_schedule(
    img_w: int,
    img_h: int,
    s: int = 224,
    overrides: Sequence[float] | None = None,
) -> ResizeSchedule:
    """Default 4-level schedule (s/max-dim, 0.5, 0.75, 1.0), with the first
    factor replaced by 0.25 when the image is already near the patch size.
    Explicit overrides bypass the defaults after validation."""
    if img_w < 1 or img_h < 1:
        raise ValueError("image dimensions must be positive")
    if s < 32:
        raise ValueError("patch size must be >= 32")
    if overrides is not None:
        factors = sorted(set(float(f) for f in overrides))
        if not factors:
            raise BadSchedule("override schedule is empty")
        if any(not 0.0 < f <= 1.0 for f in factors):
            raise BadSchedule("override factors must lie in (0, 1]")
        if factors[-1] != 1.0:
            raise BadSchedule("override schedule must contain 1.0")
        return ResizeSchedule(tuple(factors), s)
    r2, r3, r4 = 0.5, 0.75, 1.0
    r1 = s / max(img_w, img_h)
    if r1 >= 0.5 * r2:
        r1 = 0.25
    factors: list[float] = []
    for f in (r1, r2, r3, r4):
        if not factors or f > factors[-1]:
            factors.append(f)
    return ResizeSchedule(tuple(factors), s)


def _scaled_dims(h: int, w: int, factor: float) -> tuple[int, int]:
    return max(1, int(round(h * factor))), max(1, int(round(w * factor)))


def resize_image(img: np.ndarray, factor: float) -> np.ndarray:
    """Bilinear resize; output dims are round(dim * factor), at least 1."""
    if factor <= 0:
        raise ValueError("factor must be positive")
    if factor == 1.0:
        return img.copy()
    h, w = img.shape[:2]
    oh, ow = _scaled_dims(h, w, factor)
    return cv2.resize(img, (ow, oh), interpolation=cv2.INTER_LINEAR)


def resize_flow(
    flow: np.ndarray,
    fg: np.ndarray,
    factor: float,
    out_shape: tuple[int, int] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Bilinearly resample a flow field and foreground map. Resampled vectors
    longer than 0.1 are re-normalized to unit length, shorter ones are zeroed
    so interpolation slivers at instance borders cannot launch particles.
    out_shape pins the output dims exactly (used when going back to the
    original resolution, where round-tripped dims could drift by a pixel)."""
    if factor <= 0:
        raise ValueError("factor must be positive")
    h, w = fg.shape
    if flow.shape != (2, h, w):
        raise ShapeMismatch(f"flow {flow.shape} does not match fg {fg.shape}")
    oh, ow = out_shape if out_shape is not None else _scaled_dims(h, w, factor)
    if (oh, ow) == (h, w):
        return renormalize_flow(flow.copy()), fg.copy()
    dy = cv2.resize(flow[0], (ow, oh), interpolation=cv2.INTER_LINEAR)
    dx = cv2.resize(flow[1], (ow, oh), interpolation=cv2.INTER_LINEAR)
    out_fg = cv2.resize(fg, (ow, oh), interpolation=cv2.INTER_LINEAR)
    return renormalize_flow(np.stack([dy, dx])), out_fg


def renormalize_flow(flow: np.ndarray) -> np.ndarray:
    """Unit-normalize vectors with magnitude > 0.1 in place; zero the rest."""
    mag = np.hypot(flow[0], flow[1])
    keep = mag > FLOW_RENORM_THRESHOLD
    scale = np.where(keep, 1.0 / np.maximum(mag, 1e-12), 0.0).astype(flow.dtype)
    flow[0] *= scale
    flow[1] *= scale
    return flow


def _axis_starts(dim: int, s: int) -> list[int]:
    if dim <= s:
        return [0]
    starts = list(range(0, dim - s + 1, s // 2))
    if starts[-1] != dim - s:
        starts.append(dim - s)
    return starts


def tile(img_w: int, img_h: int, s: int = 224) -> list[Rect]:
    """Square patches of side s at 50% overlap; the last row/column is
    shifted inward to stay in bounds. Images smaller than s in a dimension
    get a single patch spanning that dimension (the caller reflect-pads the
    pixels up to s before prediction)."""
    rh = min(s, img_h)
    rw = min(s, img_w)
    return [
        Rect(t, l, rh, rw)
        for t in _axis_starts(img_h, s)
        for l in _axis_starts(img_w, s)
    ]


def _axis_taper(length: int, at_low_border: bool, at_high_border: bool) -> np.ndarray:
    idx = np.arange(length, dtype=np.float64)
    d_low = np.full(length, np.inf) if at_low_border else idx
    d_high = np.full(length, np.inf) if at_high_border else (length - 1) - idx
    z = (np.minimum(d_low, d_high) - TAPER_SOFT_WIDTH) / TAPER_SLOPE
    w = 1.0 / (1.0 + np.exp(-z))
    return np.maximum(w, TAPER_FLOOR)


def taper_weights(rect: Rect, img_w: int, img_h: int) -> np.ndarray:
    """Per-pixel blend weight for one patch: sigmoid decay toward patch edges
    that abut other patches, identically 1 at edges on the image border."""
    wy = _axis_taper(rect.height, rect.top == 0, rect.top + rect.height == img_h)
    wx = _axis_taper(rect.width, rect.left == 0, rect.left + rect.width == img_w)
    return wy[:, None] * wx[None, :]


def stitch(
    patch_outputs: Sequence[tuple[Rect, np.ndarray, np.ndarray]],
    img_w: int,
    img_h: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Blend patch predictions into a full-size flow field and foreground map
    with taper-weighted averaging, then re-normalize the averaged vectors.
    Accumulation follows the given patch order, so results are deterministic."""
    acc_flow = np.zeros((2, img_h, img_w), np.float64)
    acc_fg = np.zeros((img_h, img_w), np.float64)
    acc_w = np.zeros((img_h, img_w), np.float64)
    for rect, pflow, pfg in patch_outputs:
        t, l, rh, rw = rect
        if t < 0 or l < 0 or t + rh > img_h or l + rw > img_w or rh < 1 or rw < 1:
            raise BadRect(f"rect {rect} outside {img_w}x{img_h} image")
        if pflow.shape != (2, rh, rw) or pfg.shape != (rh, rw):
            raise ShapeMismatch(
                f"patch output shapes {pflow.shape}/{pfg.shape} do not match rect {rect}"
            )
        w2d = taper_weights(rect, img_w, img_h)
        acc_flow[:, t : t + rh, l : l + rw] += pflow * w2d
        acc_fg[t : t + rh, l : l + rw] += pfg * w2d
        acc_w[t : t + rh, l : l + rw] += w2d
    covered = acc_w > 0
    inv = np.zeros_like(acc_w)
    inv[covered] = 1.0 / acc_w[covered]
    out_flow = (acc_flow * inv).astype(np.float32)
    out_fg = (acc_fg * inv).astype(np.float32)
    return renormalize_flow(out_flow), out_fg
