"""Numba kernels for the simulator hot path.

These mirror the public numpy semantics in world2d exactly (bilinear SDF
with clamped cells, central-difference gradients with h = cell/2, and the
backward/forward reaching projection); tests pin the two against each
other. Keeping the loops in machine code makes MPC rollouts and dataset
collection fast enough for single-CPU budgets.
"""

import numba
import numpy as np


@numba.njit(cache=True, inline="always")
def _bilinear(values, ox, oy, cell, x, y):
    h, w = values.shape
    gx = (x - ox) / cell
    gy = (y - oy) / cell
    if gx < 0.0:
        gx = 0.0
    elif gx > w - 1.0:
        gx = w - 1.0
    if gy < 0.0:
        gy = 0.0
    elif gy > h - 1.0:
        gy = h - 1.0
    ix = int(np.floor(gx))
    iy = int(np.floor(gy))
    if ix > w - 2:
        ix = w - 2
    if iy > h - 2:
        iy = h - 2
    fx = gx - ix
    fy = gy - iy
    return ((values[iy, ix] * (1.0 - fx) + values[iy, ix + 1] * fx) * (1.0 - fy)
            + (values[iy + 1, ix] * (1.0 - fx) + values[iy + 1, ix + 1] * fx) * fy)


@numba.njit(cache=True, inline="always")
def _grad(values, ox, oy, cell, x, y):
    h = 0.5 * cell
    gx = (_bilinear(values, ox, oy, cell, x + h, y)
          - _bilinear(values, ox, oy, cell, x - h, y)) / (2.0 * h)
    gy = (_bilinear(values, ox, oy, cell, x, y + h)
          - _bilinear(values, ox, oy, cell, x, y - h)) / (2.0 * h)
    return gx, gy


@numba.njit(cache=True)
def push_points(pts, margin, iters, values, ox, oy, cell):
    """Project points (S, 2) to sdf >= margin, in place."""
    for s in range(pts.shape[0]):
        x = pts[s, 0]
        y = pts[s, 1]
        for _ in range(iters):
            v = _bilinear(values, ox, oy, cell, x, y)
            if v >= margin:
                break
            gx, gy = _grad(values, ox, oy, cell, x, y)
            gn = np.sqrt(gx * gx + gy * gy)
            if gn <= 1e-6:
                break
            step = (margin - v) / gn
            x += gx * step
            y += gy * step
        pts[s, 0] = x
        pts[s, 1] = y


@numba.njit(cache=True)
def project_chain(joints, base, target, link_length, iters, margin, values, ox, oy, cell):
    """Constraint projection for a batch of chains (S, K, 2), in place.

    Each round: push joints (except the base) out of obstacles, then a
    backward reaching pass pinning the gripper to target, then a forward
    reaching pass pinning the base. The forward pass runs last, so link
    lengths and the base position are exact on exit and the gripper yields
    when its pin is inconsistent with the other constraints.
    """
    n, k = joints.shape[0], joints.shape[1]
    for s in range(n):
        for _ in range(iters):
            for j in range(1, k):
                x = joints[s, j, 0]
                y = joints[s, j, 1]
                v = _bilinear(values, ox, oy, cell, x, y)
                if v < margin:
                    gx, gy = _grad(values, ox, oy, cell, x, y)
                    gn = np.sqrt(gx * gx + gy * gy)
                    if gn > 1e-6:
                        step = (margin - v) / gn
                        joints[s, j, 0] = x + gx * step
                        joints[s, j, 1] = y + gy * step
            joints[s, k - 1, 0] = target[s, 0]
            joints[s, k - 1, 1] = target[s, 1]
            for i in range(k - 2, -1, -1):
                dx = joints[s, i, 0] - joints[s, i + 1, 0]
                dy = joints[s, i, 1] - joints[s, i + 1, 1]
                dist = np.sqrt(dx * dx + dy * dy)
                if dist > 1e-9:
                    sc = link_length / dist
                    joints[s, i, 0] = joints[s, i + 1, 0] + dx * sc
                    joints[s, i, 1] = joints[s, i + 1, 1] + dy * sc
                else:
                    joints[s, i, 0] = joints[s, i + 1, 0] + link_length
                    joints[s, i, 1] = joints[s, i + 1, 1]
            joints[s, 0, 0] = base[s, 0]
            joints[s, 0, 1] = base[s, 1]
            for i in range(k - 1):
                dx = joints[s, i + 1, 0] - joints[s, i, 0]
                dy = joints[s, i + 1, 1] - joints[s, i, 1]
                dist = np.sqrt(dx * dx + dy * dy)
                if dist > 1e-9:
                    sc = link_length / dist
                    joints[s, i + 1, 0] = joints[s, i, 0] + dx * sc
                    joints[s, i + 1, 1] = joints[s, i, 1] + dy * sc
                else:
                    joints[s, i + 1, 0] = joints[s, i, 0] + link_length
                    joints[s, i + 1, 1] = joints[s, i, 1]
