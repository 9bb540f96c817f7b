"""Synthetic polycrystal generator with controllable size heterogeneity.

A sample is a convex-ish grain filled with Voronoi cells grown from seed
points. Small-crystal seeds are packed into one dense cluster while large
ones spread over the rest of the grain, so the spread between the smallest
and largest crystal is a generation knob. Cells are eroded to carve dark
boundary lines, rendered with per-cell shading, scratched, and noised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import cv2
import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import SynthInfeasible
from .metrics import homogeneity_and_class

MIN_INSTANCE_AREA = 16
CLUSTER_RADIUS_SCALE = 0.38

CLASS_RECIPES: dict[int, dict] = {
    1: {"width": 512, "height": 512, "n_seeds_small": 80, "n_seeds_large": 0},
    2: {"width": 1024, "height": 1024, "n_seeds_small": 40, "n_seeds_large": 2},
    3: {"width": 1024, "height": 1024, "n_seeds_small": 12, "n_seeds_large": 1},
}


@dataclass(frozen=True)
class SynthParams:
    width: int
    height: int
    n_seeds_small: int
    n_seeds_large: int
    boundary_px: int = 5
    scratch_count: int = 3
    noise_sigma: float = 6.0
    grain_margin: int = 24
    seed: int | Sequence[int] = 0

    def __post_init__(self):
        if self.width < 64 or self.height < 64:
            raise ValueError("dimensions must be >= 64")
        if self.boundary_px < 1:
            raise ValueError("boundary_px must be >= 1")
        if self.n_seeds_small < 0 or self.n_seeds_large < 0:
            raise ValueError("seed counts must be non-negative")
        if self.n_seeds_small + self.n_seeds_large < 1:
            raise ValueError("need at least one seed")
        if self.scratch_count < 0:
            raise ValueError("scratch_count must be non-negative")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.grain_margin < 0:
            raise ValueError("grain_margin must be non-negative")


@dataclass
class SynthSample:
    image: np.ndarray
    labels: np.ndarray
    grain_mask: np.ndarray
    class_id: int
    homogeneity: float


@dataclass(frozen=True)
class SplitResult:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    all_to_train: tuple[int, ...]


def _grain_mask(rng: np.random.Generator, h: int, w: int, margin: int) -> np.ndarray:
    ry = h / 2.0 - margin
    rx = w / 2.0 - margin
    if ry < 16 or rx < 16:
        raise SynthInfeasible("grain_margin leaves no room for a grain")
    cy = h / 2.0 + rng.uniform(-0.03, 0.03) * h
    cx = w / 2.0 + rng.uniform(-0.03, 0.03) * w
    n_vert = int(rng.integers(10, 16))
    angles = np.sort(rng.uniform(0, 2 * math.pi, n_vert))
    ys = cy + rng.uniform(0.78, 0.99, n_vert) * ry * np.sin(angles)
    xs = cx + rng.uniform(0.78, 0.99, n_vert) * rx * np.cos(angles)
    pts = np.stack(
        [np.clip(xs, margin, w - 1 - margin), np.clip(ys, margin, h - 1 - margin)],
        axis=1,
    ).astype(np.int32)
    hull = cv2.convexHull(pts)
    mask = np.zeros((h, w), np.uint8)
    cv2.fillConvexPoly(mask, hull, 1)
    return mask.astype(bool)


def _pick_from(rng: np.random.Generator, pool_y, pool_x, ok) -> tuple[float, float] | None:
    for _ in range(2000):
        k = int(rng.integers(0, pool_y.size))
        y, x = float(pool_y[k]), float(pool_x[k])
        if ok(y, x):
            return y, x
    return None


def _place_seeds(
    rng: np.random.Generator, grain: np.ndarray, params: SynthParams
) -> np.ndarray:
    area = float(grain.sum())
    dist_in = cv2.distanceTransform(grain.astype(np.uint8), cv2.DIST_L2, 5)
    py, px = np.nonzero(dist_in >= params.boundary_px + 4)
    if py.size < params.n_seeds_small + params.n_seeds_large:
        raise SynthInfeasible("grain interior too small for the requested seeds")

    n_large = params.n_seeds_large
    n_small = params.n_seeds_small
    char = math.sqrt(area / (n_large + 1))
    clustered = n_small >= 1 and n_large >= 1
    beta = CLUSTER_RADIUS_SCALE * char

    cluster = None
    if clustered:
        for shrink in range(6):
            radius = beta * 0.85**shrink
            cy, cx = np.nonzero(dist_in >= 0.6 * radius)
            if cy.size:
                k = int(rng.integers(0, cy.size))
                cluster = (float(cy[k]), float(cx[k]), radius)
                break
        if cluster is None:
            raise SynthInfeasible("no room for the small-seed cluster")

    seeds: list[tuple[float, float]] = []

    large_sep = 0.6 * math.sqrt(area / max(n_large, 1))
    for _ in range(n_large):
        def far_enough(y, x, sep=large_sep):
            if cluster is not None:
                ccy, ccx, rad = cluster
                if math.hypot(y - ccy, x - ccx) < 1.2 * rad:
                    return False
            return all(math.hypot(y - sy, x - sx) >= sep for sy, sx in seeds)

        pos = _pick_from(rng, py, px, far_enough)
        if pos is None:
            pos = _pick_from(rng, py, px, lambda y, x: far_enough(y, x, large_sep / 2))
        if pos is None:
            raise SynthInfeasible("could not separate large seeds")
        seeds.append(pos)

    if n_small >= 1:
        if clustered:
            ccy, ccx, radius = cluster
            small_sep = 0.75 * math.sqrt(math.pi * radius**2 / n_small)
            smalls: list[tuple[float, float]] = []
            attempts = 0
            while len(smalls) < n_small:
                attempts += 1
                if attempts > 8000:
                    raise SynthInfeasible("could not pack the small-seed cluster")
                r = radius * math.sqrt(rng.uniform())
                phi = rng.uniform(0, 2 * math.pi)
                y = ccy + r * math.sin(phi)
                x = ccx + r * math.cos(phi)
                iy, ix = int(round(y)), int(round(x))
                if not (0 <= iy < grain.shape[0] and 0 <= ix < grain.shape[1]):
                    continue
                if dist_in[iy, ix] < params.boundary_px + 4:
                    continue
                if any(math.hypot(y - sy, x - sx) < small_sep for sy, sx in smalls):
                    continue
                smalls.append((y, x))
            seeds.extend(smalls)
        else:
            sep = 0.65 * math.sqrt(area / n_small)
            for _ in range(n_small):
                def spread(y, x, s=sep):
                    return all(math.hypot(y - sy, x - sx) >= s for sy, sx in seeds)

                pos = _pick_from(rng, py, px, spread)
                if pos is None:
                    pos = _pick_from(rng, py, px, lambda y, x: spread(y, x, sep / 2))
                if pos is None:
                    raise SynthInfeasible("could not spread seeds over the grain")
                seeds.append(pos)

    return np.asarray(seeds, np.float64)


def _voronoi_labels(grain: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    labels = np.zeros(grain.shape, np.int32)
    gy, gx = np.nonzero(grain)
    _, owner = cKDTree(seeds).query(np.stack([gy, gx], axis=1))
    labels[gy, gx] = owner.astype(np.int32) + 1
    return labels


_FOUR = ndimage.generate_binary_structure(2, 1)


def _carve_and_clean(labels: np.ndarray, boundary_px: int) -> np.ndarray:
    """Erode every cell by boundary_px/2 so neighbors end up separated by a
    background line, keep only each cell's largest 4-connected component,
    drop remnants below the minimum area, and relabel in raster order."""
    r = boundary_px // 2
    kernel = (
        cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (2 * r + 1, 2 * r + 1))
        if r > 0
        else None
    )
    kept: list[tuple[tuple[int, int], int, int, np.ndarray]] = []
    for idx, sl in enumerate(ndimage.find_objects(labels)):
        if sl is None:
            continue
        top, left = sl[0].start, sl[1].start
        mask = (labels[sl] == idx + 1).astype(np.uint8)
        if kernel is not None:
            mask = cv2.erode(np.pad(mask, r), kernel)[r:-r, r:-r]
        comp, n = ndimage.label(mask, structure=_FOUR)
        if n == 0:
            continue
        sizes = np.bincount(comp.ravel())
        best = int(sizes[1:].argmax()) + 1
        if sizes[best] < MIN_INSTANCE_AREA:
            continue
        keep = comp == best
        ys, xs = np.nonzero(keep)
        k = np.lexsort((xs, ys))[0]
        kept.append(((top + ys[k], left + xs[k]), top, left, keep))
    out = np.zeros_like(labels)
    for new_id, (_, top, left, keep) in enumerate(sorted(kept, key=lambda e: e[0]), 1):
        out[top : top + keep.shape[0], left : left + keep.shape[1]][keep] = new_id
    return out


def _render(
    rng: np.random.Generator,
    labels: np.ndarray,
    grain: np.ndarray,
    params: SynthParams,
) -> np.ndarray:
    h, w = labels.shape
    img = np.empty((h, w, 3), np.float64)
    img[:] = rng.uniform(46, 66)
    boundary = grain & (labels == 0)
    img[boundary] = rng.uniform(22, 38)
    yy, xx = np.mgrid[0:h, 0:w]
    for sl, inst_id in zip(ndimage.find_objects(labels), range(1, labels.max() + 1)):
        if sl is None:
            continue
        mask = labels[sl] == inst_id
        base = rng.uniform(95, 205)
        tint = rng.uniform(-10, 10, 3)
        theta = rng.uniform(0, 2 * math.pi)
        amp = rng.uniform(4, 14)
        cy = yy[sl][mask]
        cx = xx[sl][mask]
        proj = (cy - cy.mean()) * math.sin(theta) + (cx - cx.mean()) * math.cos(theta)
        span = max(float(np.abs(proj).max()), 1.0)
        shade = base + amp * proj / span
        img[sl][mask] = shade[:, None] + tint[None, :]
    for _ in range(params.scratch_count):
        p1 = (int(rng.integers(0, w)), int(rng.integers(0, h)))
        p2 = (int(rng.integers(0, w)), int(rng.integers(0, h)))
        color = float(rng.uniform(18, 40))
        thickness = int(rng.integers(1, 3))
        cv2.line(img, p1, p2, (color, color, color), thickness)
    if params.noise_sigma > 0:
        img += rng.normal(0, params.noise_sigma, (h, w, 3))
    return np.clip(img, 0, 255).astype(np.uint8)


def generate(params: SynthParams) -> SynthSample:
    """Deterministically generate one synthetic polycrystal sample."""
    rng = np.random.default_rng(np.random.SeedSequence(params.seed))
    grain = _grain_mask(rng, params.height, params.width, params.grain_margin)
    seeds = _place_seeds(rng, grain, params)
    labels = _carve_and_clean(_voronoi_labels(grain, seeds), params.boundary_px)
    if labels.max() == 0:
        raise SynthInfeasible("all cells collapsed below the minimum area")
    image = _render(rng, labels, grain, params)
    score, cls = homogeneity_and_class(labels)
    return SynthSample(image, labels, grain, cls, score)


def stratified_split(
    classes: Sequence[int],
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
) -> SplitResult:
    """Per-class shuffled largest-remainder split into train/val/test index
    lists. Classes with fewer members than split parts go entirely to train
    and are reported in all_to_train."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    if any(f < 0 for f in fractions):
        raise ValueError("fractions must be non-negative")
    classes = np.asarray(classes)
    rng = np.random.default_rng(seed)
    parts: tuple[list[int], ...] = ([], [], [])
    underfilled: list[int] = []
    for cls in np.unique(classes):
        members = np.nonzero(classes == cls)[0]
        rng.shuffle(members)
        if members.size < len(parts):
            parts[0].extend(int(i) for i in members)
            underfilled.append(int(cls))
            continue
        raw = [f * members.size for f in fractions]
        counts = [int(math.floor(v)) for v in raw]
        remainders = [v - c for v, c in zip(raw, counts)]
        for _ in range(members.size - sum(counts)):
            j = int(np.argmax(remainders))
            counts[j] += 1
            remainders[j] = -1.0
        offset = 0
        for part, count in zip(parts, counts):
            part.extend(int(i) for i in members[offset : offset + count])
            offset += count
    return SplitResult(
        tuple(sorted(parts[0])),
        tuple(sorted(parts[1])),
        tuple(sorted(parts[2])),
        tuple(underfilled),
    )
