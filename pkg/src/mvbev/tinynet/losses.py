"""Gaussian soft targets and the squared-error losses on BEV and per-view maps."""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Sequence

import numpy as np

from ..errors import PositionOutOfGrid, ShapeMismatch
from ..geometry import BevGrid, CameraCalibration, project_points


@lru_cache(maxsize=32)
def _kernel(sigma: float) -> tuple[int, np.ndarray]:
    r = int(math.ceil(3 * sigma))
    d = np.arange(-r, r + 1, dtype=np.float64)
    d2 = d[:, None] ** 2 + d[None, :] ** 2
    k = np.exp(-d2 / (2 * sigma * sigma))
    k[d2 > r * r] = 0.0
    k.setflags(write=False)
    return r, k


def gaussian_soft_target(positions, sigma: float, grid, dtype=np.float32) -> np.ndarray:
    """Peak-1 Gaussians at each cell, truncated at radius ceil(3*sigma), merged by pointwise max.

    ``grid`` is a :class:`BevGrid` or an ``(h, w)`` shape.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    h, w = grid.shape if isinstance(grid, BevGrid) else tuple(grid)
    out = np.zeros((h, w), dtype=np.float64)
    pos = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
    if len(pos) == 0:
        return out.astype(dtype)
    if np.any(pos < 0) or np.any(pos[:, 0] >= h) or np.any(pos[:, 1] >= w):
        raise PositionOutOfGrid(f"positions outside {h}x{w} grid")
    r, k = _kernel(float(sigma))
    for i, j in pos:
        i0, i1 = max(i - r, 0), min(i + r + 1, h)
        j0, j1 = max(j - r, 0), min(j + r + 1, w)
        sub = k[i0 - (i - r):i1 - (i - r), j0 - (j - r):j1 - (j - r)]
        np.maximum(out[i0:i1, j0:j1], sub, out=out[i0:i1, j0:j1])
    return out.astype(dtype)


def mse_loss(target: np.ndarray, pred: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed squared error and its gradient w.r.t. ``pred``."""
    if target.shape != pred.shape:
        raise ShapeMismatch(f"target {target.shape} vs prediction {pred.shape}")
    diff = pred - target
    return float(np.sum(np.square(diff, dtype=np.float64))), 2 * diff


def project_positions_to_feature(calib: CameraCalibration, positions, grid: BevGrid, height: float,
                                 scale: float, h_f: int, w_f: int) -> np.ndarray:
    """Feature-plane pixels (row, col) of cell centres lifted to ``height``; out-of-view rows dropped."""
    pos = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
    if len(pos) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    xs = grid.origin_x + (pos[:, 0] + 0.5) * grid.cell_size
    ys = grid.origin_y + (pos[:, 1] + 0.5) * grid.cell_size
    uv, z = project_points(calib, np.column_stack([xs, ys, np.full(len(pos), height)]))
    ok = z > 0
    col = np.floor(uv[:, 0] * scale + 0.5)
    row = np.floor(uv[:, 1] * scale + 0.5)
    ok &= np.isfinite(col) & np.isfinite(row)
    ok &= (row >= 0) & (row < h_f) & (col >= 0) & (col < w_f)
    return np.stack([row[ok], col[ok]], axis=1).astype(np.int64)


def perspective_targets(calib: CameraCalibration, positions, grid: BevGrid, h_f: int, w_f: int,
                        scale: float, sigma_px: float, ped_height: float, dtype=np.float32) -> np.ndarray:
    """(2, h_f, w_f) head/foot soft targets for one view; ``sigma_px`` is in image pixels."""
    sigma = sigma_px * scale
    head = project_positions_to_feature(calib, positions, grid, ped_height, scale, h_f, w_f)
    foot = project_positions_to_feature(calib, positions, grid, 0.0, scale, h_f, w_f)
    return np.stack([gaussian_soft_target(head, sigma, (h_f, w_f), dtype),
                     gaussian_soft_target(foot, sigma, (h_f, w_f), dtype)])


def perspective_loss(aux_maps: dict, positions, calibs: Sequence[CameraCalibration], grid: BevGrid,
                     sigma_px: float, ped_height: float, scale: float = 0.25):
    """Mean over supplied views of head + foot squared error.

    ``aux_maps`` maps view index to a (2, h_f, w_f) prediction (channel 0 head,
    channel 1 foot). Returns ``(loss, {view: gradient})``.
    """
    if not aux_maps:
        return 0.0, {}
    n_views = len(aux_maps)
    total = 0.0
    grads = {}
    for n, pred in aux_maps.items():
        if pred.ndim != 3 or pred.shape[0] != 2:
            raise ShapeMismatch(f"view {n}: aux map must be (2, h_f, w_f), got {pred.shape}")
        tgt = perspective_targets(calibs[n], positions, grid, pred.shape[1], pred.shape[2], scale,
                                  sigma_px, ped_height, pred.dtype)
        lh, gh = mse_loss(tgt[0], pred[0])
        lf, gf = mse_loss(tgt[1], pred[1])
        total += lh + lf
        grads[n] = np.stack([gh, gf]) / n_views
    return total / n_views, grads
