"""End-to-end multi-scale segmentation pipeline and its predictors.

The predictor slot is filled by an oracle that derives flow/foreground maps
from ground-truth labels and degrades them the way a patch-based network
degrades: crystals that become smaller than a few pixels at a coarse scale
vanish, and crystals larger than a patch get per-patch flow with ambiguous
centers. Per-scale predictions are fused (attention-weighted, averaged,
max-foreground, or single-scale) and tracked into an instance label map.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

from ._labelops import check_label_map, instance_bboxes
from .attention import DEFAULT_THRESHOLDS, AttentionStack, gt_attention, normalize_stack
from .errors import (
    ConfigError,
    PredictionUnavailable,
    ScaleCountMismatch,
    ShapeMismatch,
)
from .flowfield import compute_flow
from .metrics import acs
from .scalespace import (
    build_schedule,
    renormalize_flow,
    resize_flow,
    stitch,
    tile,
)
from .tracker import TrackerParams, euler_track

FUSION_STRATEGIES = ("attention", "average", "max", "single")
PREDICTOR_KINDS = ("oracle", "noisy-oracle", "external")
_MAGIC = b"CFLW"


@dataclass(frozen=True)
class PredictorSpec:
    kind: str = "oracle"
    min_detectable_px: int = 4
    large_break_factor: float = 1.0
    noise_deg: float = 0.0
    noise_seed: int = 0
    path: str | None = None

    def __post_init__(self):
        if self.kind not in PREDICTOR_KINDS:
            raise ConfigError(f"unknown predictor kind {self.kind!r}")
        if self.min_detectable_px < 1:
            raise ConfigError("min_detectable_px must be >= 1")
        if self.large_break_factor <= 0:
            raise ConfigError("large_break_factor must be positive")
        if self.noise_deg < 0:
            raise ConfigError("noise_deg must be non-negative")
        if self.kind == "external" and not self.path:
            raise ConfigError("external predictor needs a path")


@dataclass(frozen=True)
class PipelineConfig:
    fusion: str = "attention"
    t: tuple[float, ...] = DEFAULT_THRESHOLDS
    h: float = 0.0
    patch_size: int = 224
    schedule_overrides: tuple[float, ...] | None = None
    tracker: TrackerParams = TrackerParams()
    predictor: PredictorSpec = PredictorSpec()
    attention_blur_sigma: float = 0.0
    d: float = 50.0

    def __post_init__(self):
        if self.fusion not in FUSION_STRATEGIES:
            raise ConfigError(f"unknown fusion strategy {self.fusion!r}")
        if not 0.0 <= self.h < 1.0:
            raise ConfigError("h must lie in [0, 1)")
        if self.patch_size < 32:
            raise ConfigError("patch_size must be >= 32")
        if self.attention_blur_sigma < 0:
            raise ConfigError("attention_blur_sigma must be non-negative")
        if self.d <= 0:
            raise ConfigError("d must be positive")


def _nearest_labels(labels: np.ndarray, h: int, w: int) -> np.ndarray:
    if labels.shape == (h, w):
        return labels.copy()
    return cv2.resize(labels.astype(np.int32), (w, h), interpolation=cv2.INTER_NEAREST)


def _prediction_path(root: str, image_id: str, kind: str, r: float) -> Path:
    return Path(root) / f"{kind}_{image_id}_{repr(float(r))}.f32"


def save_prediction(
    root: str, image_id: str, r: float, flow: np.ndarray, fg: np.ndarray
) -> None:
    """Write one scale's prediction in the external predictor file layout."""
    h, w = fg.shape
    for kind, data, channels in (("flow", flow, 2), ("fg", fg[None], 1)):
        path = _prediction_path(root, image_id, kind, r)
        with open(path, "wb") as f:
            f.write(_MAGIC + struct.pack("<III", w, h, channels))
            f.write(np.ascontiguousarray(data, np.float32).tobytes())


def _read_planes(path: Path, channels: int, shape: tuple[int, int]) -> np.ndarray:
    if not path.exists():
        raise PredictionUnavailable(f"missing prediction file {path}")
    blob = path.read_bytes()
    if blob[:4] != _MAGIC or len(blob) < 16:
        raise PredictionUnavailable(f"bad header in {path}")
    w, h, c = struct.unpack("<III", blob[4:16])
    if c != channels:
        raise PredictionUnavailable(f"{path} holds {c} channels, expected {channels}")
    if (h, w) != shape:
        raise ShapeMismatch(f"{path} is {w}x{h}, image is {shape[1]}x{shape[0]}")
    data = np.frombuffer(blob[16:], np.float32)
    if data.size != c * h * w:
        raise PredictionUnavailable(f"{path} payload truncated")
    return data.reshape(c, h, w).copy()


def _load_external(
    spec: PredictorSpec, image_id: str | None, r: float, shape: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    if image_id is None:
        raise PredictionUnavailable("external predictor needs an image id")
    flow = _read_planes(_prediction_path(spec.path, image_id, "flow", r), 2, shape)
    fg = _read_planes(_prediction_path(spec.path, image_id, "fg", r), 1, shape)
    return flow, fg[0]


def _oracle_scale_prediction(
    gt: np.ndarray, r: float, spec: PredictorSpec, s: int
) -> tuple[np.ndarray, np.ndarray]:
    """Flow/foreground at scale r, degraded like a patch-based predictor."""
    h, w = gt.shape
    hr, wr = (h, w) if r == 1.0 else (
        max(1, int(round(h * r))), max(1, int(round(w * r)))
    )
    gt_r = _nearest_labels(gt, hr, wr)
    boxes = instance_bboxes(gt_r)
    lengths = {i: max(bh, bw) for i, (_, _, bh, bw) in boxes.items()}
    visible = {i for i, n in lengths.items() if n >= spec.min_detectable_px}
    big = {i for i in visible if lengths[i] > spec.large_break_factor * s}

    small_map = np.where(np.isin(gt_r, sorted(visible - big)), gt_r, 0)
    flow_small, fg_small = compute_flow(small_map)

    outputs = []
    for rect in tile(wr, hr, s):
        t, l, rh, rw = rect
        window = (slice(t, t + rh), slice(l, l + rw))
        pflow = flow_small[:, window[0], window[1]].copy()
        pfg = fg_small[window].copy()
        if big:
            crop = gt_r[window]
            for inst in sorted(big):
                mask = crop == inst
                if not mask.any():
                    continue
                bflow, _ = compute_flow(mask.astype(np.int32))
                pflow[:, mask] = bflow[:, mask]
                pfg[mask] = 1.0
        outputs.append((rect, pflow, pfg))
    flow_r, fg_r = stitch(outputs, wr, hr)

    if spec.kind == "noisy-oracle" and spec.noise_deg > 0:
        rng = np.random.default_rng(
            np.random.SeedSequence([spec.noise_seed, int(round(r * 1e6)), hr, wr])
        )
        dy, dx = flow_r
        moving = np.hypot(dy, dx) > 0
        ang = rng.normal(0.0, math.radians(spec.noise_deg), int(moving.sum()))
        ca, sa = np.cos(ang), np.sin(ang)
        ry = ca * dy[moving] - sa * dx[moving]
        rx = sa * dy[moving] + ca * dx[moving]
        dy[moving] = ry
        dx[moving] = rx

    if (hr, wr) == (h, w):
        return flow_r, fg_r
    return resize_flow(flow_r, fg_r, 1.0 / r, out_shape=(h, w))


def predict_at_scale(
    image: np.ndarray,
    gt: np.ndarray | None,
    r: float,
    spec: PredictorSpec,
    s: int = 224,
    image_id: str | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One scale's (flow, foreground) at original resolution."""
    if r <= 0 or r > 1:
        raise ConfigError(f"scale factor {r} outside (0, 1]")
    h, w = image.shape[:2]
    if spec.kind == "external":
        return _load_external(spec, image_id, r, (h, w))
    if gt is None:
        raise ConfigError("oracle predictors need ground-truth labels")
    check_label_map(gt)
    if gt.shape != (h, w):
        raise ShapeMismatch(f"gt {gt.shape} does not match image {(h, w)}")
    return _oracle_scale_prediction(gt, r, spec, s)


def fuse(
    flows: Sequence[np.ndarray],
    fgs: Sequence[np.ndarray],
    attn: AttentionStack | None,
    strategy: str,
) -> tuple[np.ndarray, np.ndarray]:
    """Combine per-scale predictions into one flow/foreground pair. Scale i
    (ascending resize factor) pairs with attention map i, so the map for the
    largest crystals weights the lowest-resolution prediction."""
    if strategy not in FUSION_STRATEGIES:
        raise ConfigError(f"unknown fusion strategy {strategy!r}")
    n = len(flows)
    if len(fgs) != n or n == 0:
        raise ScaleCountMismatch(f"{n} flows vs {len(fgs)} foregrounds")
    shape = fgs[0].shape
    for f, g in zip(flows, fgs):
        if f.shape != (2, *shape) or g.shape != shape:
            raise ShapeMismatch("scale outputs disagree in shape")

    if strategy == "single":
        if n != 1:
            raise ScaleCountMismatch(f"single fusion got {n} scales")
        return renormalize_flow(flows[0].astype(np.float32).copy()), fgs[0].copy()

    if strategy == "max":
        stack_fg = np.stack(fgs)
        pick = stack_fg.argmax(axis=0)
        fg = stack_fg.max(axis=0)
        flow = np.take_along_axis(
            np.stack(flows), pick[None, None], axis=0
        )[0].astype(np.float32)
        return renormalize_flow(flow), fg.astype(np.float32)

    if strategy == "attention":
        if attn is None:
            raise ConfigError("attention fusion needs an attention stack")
        if attn.n_levels != n:
            raise ScaleCountMismatch(
                f"{attn.n_levels} attention levels vs {n} scales"
            )
        weights = [attn.maps[i].astype(np.float64) for i in range(n)]
    else:
        weights = [np.full(shape, 1.0 / n) for _ in range(n)]

    flow = np.zeros((2, *shape), np.float64)
    fg = np.zeros(shape, np.float64)
    for wgt, f, g in zip(weights, flows, fgs):
        flow += wgt * f.astype(np.float64)
        fg += wgt * g.astype(np.float64)
    return renormalize_flow(flow.astype(np.float32)), fg.astype(np.float32)


def _attention_stack(gt: np.ndarray, config: PipelineConfig) -> AttentionStack:
    stack = gt_attention(gt, config.t)
    if config.attention_blur_sigma <= 0:
        return stack
    sigma = config.attention_blur_sigma
    blurred = np.stack(
        [cv2.GaussianBlur(m, (0, 0), sigma) for m in stack.maps]
    )
    return normalize_stack(AttentionStack(blurred, stack.thresholds))


def _tracker_with_h(config: PipelineConfig) -> TrackerParams:
    if config.tracker.h == config.h:
        return config.tracker
    return replace(config.tracker, h=config.h)


def _schedule_factors(config: PipelineConfig, w: int, h: int) -> tuple[float, ...]:
    overrides = config.schedule_overrides
    if overrides is None and config.fusion == "single":
        overrides = (1.0,)
    return build_schedule(w, h, config.patch_size, overrides).factors


def segment(
    image: np.ndarray,
    gt_for_oracle: np.ndarray | None,
    config: PipelineConfig,
    image_id: str | None = None,
) -> np.ndarray:
    """Multi-scale prediction, fusion, and tracking for one image."""
    h, w = image.shape[:2]
    factors = _schedule_factors(config, w, h)
    if config.fusion == "attention":
        if gt_for_oracle is None:
            raise ConfigError("attention fusion needs labels for the attention stack")
        if len(config.t) != len(factors):
            raise ScaleCountMismatch(
                f"{len(config.t)} thresholds vs {len(factors)} scales"
            )
    preds = [
        predict_at_scale(image, gt_for_oracle, r, config.predictor,
                         config.patch_size, image_id)
        for r in factors
    ]
    flows = [p[0] for p in preds]
    fgs = [p[1] for p in preds]
    attn = (
        _attention_stack(gt_for_oracle, config)
        if config.fusion == "attention"
        else None
    )
    flow, fg = fuse(flows, fgs, attn, config.fusion)
    return euler_track(flow, fg, _tracker_with_h(config))


def segment_single_scale_baseline(
    image: np.ndarray,
    gt_for_oracle: np.ndarray,
    config: PipelineConfig,
    image_id: str | None = None,
) -> np.ndarray:
    """Single-scale run at the factor that maps the ground-truth average
    crystal size onto the target size d (a perfect size estimator stand-in)."""
    if gt_for_oracle is None or not (gt_for_oracle > 0).any():
        return np.zeros(image.shape[:2], np.int32)
    factor = min(1.0, config.d / acs(gt_for_oracle))
    flow, fg = predict_at_scale(
        image, gt_for_oracle, factor, config.predictor, config.patch_size, image_id
    )
    return euler_track(flow, fg, _tracker_with_h(config))
