"""Pinhole projection, ground-plane homography and the nearest-neighbour BEV warp.

Conventions
-----------
World frame: right-handed, Z up, ground plane at Z = 0 (meters).
Camera frame: X right, Y down, Z forward. ``R`` and ``t`` map world to camera,
``p_cam = R @ p_world + t``.
Image frame: ``u`` is the column, ``v`` the row; integer coordinates are pixel
centres.
BEV grid: cell ``(i, j)`` covers ``X in [origin_x + i*cell, origin_x + (i+1)*cell)``
and ``Y in [origin_y + j*cell, ...)``; ``i`` indexes rows (``h_g``), ``j`` columns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BehindCamera, DegenerateCamera, InvalidCalibration, ShapeMismatch

OUT_OF_VIEW = -1
_ORTHO_TOL = 1e-9
_COND_MAX = 1e12


@dataclass(frozen=True)
class CameraCalibration:
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    t: np.ndarray
    image_w: int
    image_h: int

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidCalibration(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if np.max(np.abs(R @ R.T - np.eye(3))) > _ORTHO_TOL:
            raise InvalidCalibration("R is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise InvalidCalibration("det(R) must be +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.R.T @ self.t

    def to_dict(self) -> dict:
        return {
            "fx": float(self.fx), "fy": float(self.fy), "cx": float(self.cx), "cy": float(self.cy),
            "image_w": int(self.image_w), "image_h": int(self.image_h),
            "R": [float(v) for v in self.R.reshape(-1)],
            "t": [float(v) for v in self.t],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraCalibration":
        return cls(
            fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
            R=np.asarray(d["R"], dtype=np.float64).reshape(3, 3),
            t=np.asarray(d["t"], dtype=np.float64),
            image_w=int(d["image_w"]), image_h=int(d["image_h"]),
        )


def look_at(position, target, fx, fy, cx, cy, image_w, image_h, roll_deg: float = 0.0) -> CameraCalibration:
    """Camera at ``position`` whose optical axis points at ``target``.

    ``roll_deg`` turns the image clockwise about the optical axis (0 keeps the horizon level).
    """
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, [0.0, 0.0, 1.0])
    if np.linalg.norm(right) < 1e-9:
        # looking straight up or down: pick world +X as image right
        right = np.array([1.0, 0.0, 0.0]) - forward * forward[0]
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    if roll_deg:
        a = np.deg2rad(roll_deg)
        right, down = np.cos(a) * right + np.sin(a) * down, -np.sin(a) * right + np.cos(a) * down
    R = np.stack([right, down, forward])
    return CameraCalibration(fx, fy, cx, cy, R, -R @ position, image_w, image_h)


@dataclass(frozen=True)
class BevGrid:
    origin_x: float
    origin_y: float
    cell_size: float = 0.1
    h_g: int = 1
    w_g: int = 1

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        if self.h_g < 1 or self.w_g < 1:
            raise ValueError(f"grid shape must be at least 1x1, got {self.h_g}x{self.w_g}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.h_g, self.w_g)

    def cell_centers(self) -> np.ndarray:
        """World (X, Y) of every cell centre, shape (h_g, w_g, 2)."""
        xs = self.origin_x + (np.arange(self.h_g) + 0.5) * self.cell_size
        ys = self.origin_y + (np.arange(self.w_g) + 0.5) * self.cell_size
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return (self.origin_x + (i + 0.5) * self.cell_size, self.origin_y + (j + 0.5) * self.cell_size)

    def world_to_cell(self, x, y):
        i = np.floor((np.asarray(x) - self.origin_x) / self.cell_size).astype(np.int64)
        j = np.floor((np.asarray(y) - self.origin_y) / self.cell_size).astype(np.int64)
        return i, j

    def meters_to_cells(self, meters: float) -> float:
        return meters / self.cell_size

    def to_dict(self) -> dict:
        return {"origin_x": self.origin_x, "origin_y": self.origin_y, "cell_size": self.cell_size,
                "h_g": self.h_g, "w_g": self.w_g}

    @classmethod
    def from_dict(cls, d: dict) -> "BevGrid":
        return cls(float(d["origin_x"]), float(d["origin_y"]), float(d["cell_size"]), int(d["h_g"]), int(d["w_g"]))


@dataclass(frozen=True, eq=False)
class ProjectionTable:
    """Per-cell source pixel in a feature map, ``OUT_OF_VIEW`` (-1) where not visible."""

    rows: np.ndarray
    cols: np.ndarray
    h_f: int
    w_f: int
    flat: np.ndarray = field(init=False, repr=False)
    valid: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        if rows.shape != cols.shape or rows.ndim != 2:
            raise ShapeMismatch(f"rows {rows.shape} and cols {cols.shape} must be equal 2-D shapes")
        valid = rows != OUT_OF_VIEW
        if np.any(valid != (cols != OUT_OF_VIEW)):
            raise ValueError("rows and cols disagree on OUT_OF_VIEW entries")
        if np.any((rows[valid] < 0) | (rows[valid] >= self.h_f) | (cols[valid] < 0) | (cols[valid] >= self.w_f)):
            raise ValueError("in-view entry outside the feature map")
        flat = np.where(valid, rows * self.w_f + cols, OUT_OF_VIEW).reshape(-1)
        for name, arr in (("rows", rows), ("cols", cols), ("flat", flat), ("valid", valid.reshape(-1))):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.rows.shape

    def n_in_view(self) -> int:
        return int(self.valid.sum())

    def __eq__(self, other):
        if not isinstance(other, ProjectionTable):
            return NotImplemented
        return (self.h_f, self.w_f) == (other.h_f, other.w_f) and np.array_equal(self.rows, other.rows) \
            and np.array_equal(self.cols, other.cols)

    __hash__ = None


def camera_points(calib: CameraCalibration, points) -> np.ndarray:
    """World points (M, 3) in the camera frame."""
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return P @ calib.R.T + calib.t


def project_points(calib: CameraCalibration, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised projection. Returns (uv (M, 2), depth (M,)); uv is NaN where depth <= 0."""
    pc = camera_points(calib, points)
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = calib.fx * pc[:, 0] / z + calib.cx
        v = calib.fy * pc[:, 1] / z + calib.cy
    uv = np.stack([u, v], axis=1)
    uv[z <= 0] = np.nan
    return uv, z


def project_world_to_image(calib: CameraCalibration, p) -> tuple[float, float]:
    p = np.asarray(p, dtype=np.float64).reshape(3)
    pc = calib.R @ p + calib.t
    if pc[2] <= 0:
        raise BehindCamera(f"point {p.tolist()} has camera depth {pc[2]:.6g}")
    return (calib.fx * pc[0] / pc[2] + calib.cx, calib.fy * pc[1] / pc[2] + calib.cy)


def ground_homography(calib: CameraCalibration) -> np.ndarray:
    """H = K [r1 r2 t], mapping ground (X, Y, 1) to homogeneous pixels."""
    H = calib.K @ np.column_stack([calib.R[:, 0], calib.R[:, 1], calib.t])
    if np.linalg.cond(H) > _COND_MAX:
        raise DegenerateCamera("ground homography is singular; camera lies in the ground plane")
    return H


def build_projection_table(calib: CameraCalibration, grid: BevGrid, h_f: int, w_f: int,
                           image_to_feature_scale: float) -> ProjectionTable:
    if h_f < 1 or w_f < 1:
        raise ValueError(f"feature shape must be positive, got {h_f}x{w_f}")
    if not image_to_feature_scale > 0:
        raise ValueError("image_to_feature_scale must be positive")
    H = ground_homography(calib)
    centers = grid.cell_centers().reshape(-1, 2)
    hom = np.column_stack([centers, np.ones(len(centers))]) @ H.T
    w = hom[:, 2]
    # homogeneous w equals camera depth for ground points
    in_front = w > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        fu = hom[:, 0] / w * image_to_feature_scale
        fv = hom[:, 1] / w * image_to_feature_scale
    col = np.floor(fu + 0.5)
    row = np.floor(fv + 0.5)
    ok = in_front & np.isfinite(col) & np.isfinite(row) & (row >= 0) & (row < h_f) & (col >= 0) & (col < w_f)
    rows = np.where(ok, row, OUT_OF_VIEW).astype(np.int64).reshape(grid.shape)
    cols = np.where(ok, col, OUT_OF_VIEW).astype(np.int64).reshape(grid.shape)
    return ProjectionTable(rows, cols, h_f, w_f)


def warp_to_bev(feature: np.ndarray, table: ProjectionTable) -> np.ndarray:
    """Gather (C, h_f, w_f) features onto the (C, h_g, w_g) grid; out-of-view cells are zero."""
    if feature.ndim != 3 or feature.shape[1:] != (table.h_f, table.w_f):
        raise ShapeMismatch(f"feature shape {feature.shape} does not match table ({table.h_f}, {table.w_f})")
    C = feature.shape[0]
    out = np.zeros((C, table.valid.size), dtype=feature.dtype)
    out[:, table.valid] = feature.reshape(C, -1)[:, table.flat[table.valid]]
    return out.reshape((C,) + table.grid_shape)


def warp_backward(grad_bev: np.ndarray, table: ProjectionTable) -> np.ndarray:
    """Adjoint of :func:`warp_to_bev`: scatter-add cell gradients onto their source pixels."""
    if grad_bev.ndim != 3 or grad_bev.shape[1:] != table.grid_shape:
        raise ShapeMismatch(f"gradient shape {grad_bev.shape} does not match grid {table.grid_shape}")
    C = grad_bev.shape[0]
    n_pix = table.h_f * table.w_f
    src = table.flat[table.valid]
    g = grad_bev.reshape(C, -1)[:, table.valid]
    idx = (np.arange(C)[:, None] * n_pix + src[None, :]).reshape(-1)
    acc = np.bincount(idx, weights=g.reshape(-1), minlength=C * n_pix)
    return acc.astype(grad_bev.dtype, copy=False).reshape(C, table.h_f, table.w_f)


def load_calibrations(path) -> list[CameraCalibration]:
    data = json.loads(Path(path).read_text())
    cams = data["cameras"] if isinstance(data, dict) else data
    return [CameraCalibration.from_dict(c) for c in cams]


def save_calibrations(path, cams) -> None:
    Path(path).write_text(json.dumps([c.to_dict() for c in cams], indent=1))


def load_grid(path) -> BevGrid:
    return BevGrid.from_dict(json.loads(Path(path).read_text()))


def save_grid(path, grid: BevGrid) -> None:
    Path(path).write_text(json.dumps(grid.to_dict(), indent=1))
