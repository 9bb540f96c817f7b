"""Numba kernels for the two hot loops: heat diffusion and particle tracking.

Everything here is deterministic and serial; callers rely on bit-identical
output for identical inputs. Kernels are cached on disk so the JIT cost is
paid once per environment.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def diffuse(mask, center_r, center_c, n_iter):
    """Masked heat diffusion: unit source at the center, then a 4-neighbor
    average restricted to the mask, repeated n_iter times."""
    h, w = mask.shape
    t = np.zeros((h, w), np.float64)
    nxt = np.zeros((h, w), np.float64)
    for _ in range(n_iter):
        t[center_r, center_c] += 1.0
        for r in range(h):
            for c in range(w):
                if mask[r, c]:
                    s = t[r, c]
                    n = 1
                    if r > 0 and mask[r - 1, c]:
                        s += t[r - 1, c]
                        n += 1
                    if r + 1 < h and mask[r + 1, c]:
                        s += t[r + 1, c]
                        n += 1
                    if c > 0 and mask[r, c - 1]:
                        s += t[r, c - 1]
                        n += 1
                    if c + 1 < w and mask[r, c + 1]:
                        s += t[r, c + 1]
                        n += 1
                    nxt[r, c] = s / n
        t, nxt = nxt, t
    return t


@njit(cache=True)
def masked_unit_gradient(t, mask):
    """Unit-normalized gradient of t, masked central differences with
    one-sided fallbacks at mask borders. Zero where the gradient vanishes."""
    h, w = mask.shape
    dy = np.zeros((h, w), np.float32)
    dx = np.zeros((h, w), np.float32)
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            up = r > 0 and mask[r - 1, c]
            dn = r + 1 < h and mask[r + 1, c]
            if up and dn:
                gy = (t[r + 1, c] - t[r - 1, c]) * 0.5
            elif dn:
                gy = t[r + 1, c] - t[r, c]
            elif up:
                gy = t[r, c] - t[r - 1, c]
            else:
                gy = 0.0
            lf = c > 0 and mask[r, c - 1]
            rt = c + 1 < w and mask[r, c + 1]
            if lf and rt:
                gx = (t[r, c + 1] - t[r, c - 1]) * 0.5
            elif rt:
                gx = t[r, c + 1] - t[r, c]
            elif lf:
                gx = t[r, c] - t[r, c - 1]
            else:
                gx = 0.0
            mag = math.sqrt(gy * gy + gx * gx)
            if mag > 1e-12:
                dy[r, c] = gy / mag
                dx[r, c] = gx / mag
    return dy, dx


@njit(cache=True)
def euler_integrate(dy, dx, rows, cols, n_steps, step_size):
    """Advance one particle per start pixel along the flow, bilinear sampling,
    positions clamped to image bounds. Returns final (y, x) per particle."""
    h, w = dy.shape
    n = rows.shape[0]
    out_y = np.empty(n, np.float64)
    out_x = np.empty(n, np.float64)
    for i in range(n):
        y = float(rows[i])
        x = float(cols[i])
        for _ in range(n_steps):
            r0 = int(y)
            c0 = int(x)
            if h > 1 and r0 > h - 2:
                r0 = h - 2
            if w > 1 and c0 > w - 2:
                c0 = w - 2
            r1 = r0 + 1 if h > 1 else 0
            c1 = c0 + 1 if w > 1 else 0
            fy = y - r0
            fx = x - c0
            w00 = (1.0 - fy) * (1.0 - fx)
            w01 = (1.0 - fy) * fx
            w10 = fy * (1.0 - fx)
            w11 = fy * fx
            vy = w00 * dy[r0, c0] + w01 * dy[r0, c1] + w10 * dy[r1, c0] + w11 * dy[r1, c1]
            vx = w00 * dx[r0, c0] + w01 * dx[r0, c1] + w10 * dx[r1, c0] + w11 * dx[r1, c1]
            y += step_size * vy
            x += step_size * vx
            if y < 0.0:
                y = 0.0
            elif y > h - 1.0:
                y = h - 1.0
            if x < 0.0:
                x = 0.0
            elif x > w - 1.0:
                x = w - 1.0
        out_y[i] = y
        out_x[i] = x
    return out_y, out_x


@njit(cache=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@njit(cache=True)
def _union(parent, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra != rb:
        if ra < rb:
            parent[rb] = ra
        else:
            parent[ra] = rb


@njit(cache=True)
def link_cells(keys, starts, ys, xs, boxes, n_cols, radius):
    """Single-linkage union of grid cells whose point sets come within radius.

    keys: sorted unique cell keys (iy * n_cols + ix); starts: CSR offsets into
    the cell-sorted ys/xs; boxes: per-cell (ymin, ymax, xmin, xmax). Points in
    one cell are already mutually linked (cell size = radius / sqrt(2)).
    Returns the union-find parent array over cells; the resulting partition is
    order-independent, so the output is deterministic.
    """
    n_cells = keys.shape[0]
    parent = np.arange(n_cells)
    r2 = radius * radius
    for u in range(n_cells):
        ky = keys[u] // n_cols
        kx = keys[u] % n_cols
        for dyc in range(0, 3):
            for dxc in range(-2, 3):
                if dyc == 0 and dxc <= 0:
                    continue
                nk = (ky + dyc) * n_cols + (kx + dxc)
                v = np.searchsorted(keys, nk)
                if v >= n_cells or keys[v] != nk:
                    continue
                if _find(parent, u) == _find(parent, v):
                    continue
                # box gap lower bound: farther than radius, skip
                gy = max(boxes[u, 0], boxes[v, 0]) - min(boxes[u, 1], boxes[v, 1])
                gx = max(boxes[u, 2], boxes[v, 2]) - min(boxes[u, 3], boxes[v, 3])
                if gy < 0.0:
                    gy = 0.0
                if gx < 0.0:
                    gx = 0.0
                if gy * gy + gx * gx > r2:
                    continue
                # box span upper bound: even farthest corners within radius
                sy = max(boxes[u, 1], boxes[v, 1]) - min(boxes[u, 0], boxes[v, 0])
                sx = max(boxes[u, 3], boxes[v, 3]) - min(boxes[u, 2], boxes[v, 2])
                if sy * sy + sx * sx <= r2:
                    _union(parent, u, v)
                    continue
                linked = False
                for i in range(starts[u], starts[u + 1]):
                    for j in range(starts[v], starts[v + 1]):
                        ddy = ys[i] - ys[j]
                        ddx = xs[i] - xs[j]
                        if ddy * ddy + ddx * ddx <= r2:
                            _union(parent, u, v)
                            linked = True
                            break
                    if linked:
                        break
    roots = np.empty(n_cells, np.int64)
    for i in range(n_cells):
        roots[i] = _find(parent, i)
    return roots
