"""Synthetic multi-camera pedestrian scenes and the on-disk dataset format.

Pedestrians are vertical cylinders drawn as camera-facing quads (painter's
algorithm, far to near). A domain is a photometric style plus a camera rig,
so source and target can differ in appearance, in rig, or both.

On-disk layout of a dataset directory::

    manifest.json      counts, split, file names, seed
    cameras.json       list of calibration objects
    grid.json          BEV grid
    labels.jsonl       {"frame": id, "cells": [[i, j], ...]} per frame (optional)
    views/f000012_v3.mvf
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import CorruptDataset, GridTooSmall
from .geometry import BevGrid, CameraCalibration, look_at, project_points

VIEW_MAGIC = b"MVF1"
MAX_RETRIES = 1000
IMAGE_CHANNELS = 3


@dataclass(frozen=True)
class SceneConfig:
    area_w: float = 6.0
    area_h: float = 6.0
    ped_count_min: int = 6
    ped_count_max: int = 12
    ped_radius: float = 0.3
    ped_height: float = 1.8
    min_separation: float = 0.5

    def __post_init__(self):
        if not 0 < self.ped_radius < self.min_separation:
            raise ValueError("need 0 < ped_radius < min_separation")
        if not self.ped_count_max >= self.ped_count_min >= 0:
            raise ValueError("need ped_count_max >= ped_count_min >= 0")


@dataclass(frozen=True)
class DomainStyle:
    bg_mean: float = 0.3
    bg_noise_std: float = 0.02
    ped_intensity_min: float = 0.6
    ped_intensity_max: float = 0.9
    gain: float = 1.0
    bias: float = 0.0
    texture_seed: int = 0
    texture_amp: float = 0.0
    channel_gain: tuple[float, float, float] = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class RigConfig:
    cameras: tuple[CameraCalibration, ...]
    image_w: int
    image_h: int

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        if len(self.cameras) < 1:
            raise ValueError("a rig needs at least one camera")
        for c in self.cameras:
            if (c.image_w, c.image_h) != (self.image_w, self.image_h):
                raise ValueError("all cameras must share the rig's image resolution")

    @property
    def n_views(self) -> int:
        return len(self.cameras)

    def subset(self, indices: Sequence[int]) -> "RigConfig":
        return RigConfig(tuple(self.cameras[i] for i in indices), self.image_w, self.image_h)


@dataclass
class FrameRecord:
    frame_id: int
    views: np.ndarray  # (N, 3, H, W) float32 in [0, 1]
    gt_positions: np.ndarray | None = None  # (K, 2) int64 cells, None when unlabeled

    @property
    def n_views(self) -> int:
        return self.views.shape[0]

    def unlabeled(self) -> "FrameRecord":
        return FrameRecord(self.frame_id, self.views, None)


def ring_rig(n_cams: int, center, radius: float, height: float, fx: float, image_w: int, image_h: int,
             start_angle_deg: float = 0.0, look_height: float = 0.0) -> RigConfig:
    """``n_cams`` cameras evenly spaced on a circle, all aimed at ``center``."""
    cx, cy = center
    cams = []
    for k in range(n_cams):
        a = np.deg2rad(start_angle_deg + 360.0 * k / n_cams)
        pos = (cx + radius * np.cos(a), cy + radius * np.sin(a), height)
        cams.append(look_at(pos, (cx, cy, look_height), fx, fx, (image_w - 1) / 2, (image_h - 1) / 2,
                            image_w, image_h))
    return RigConfig(tuple(cams), image_w, image_h)


def frame_rng(seed: int, frame_id: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(frame_id)])


def fill_convex_polygon(img: np.ndarray, poly: np.ndarray, value) -> np.ndarray:
    """Set pixels whose centres lie inside the convex polygon ``poly`` ((K, 2) as u, v).

    ``img`` is (..., H, W); returns the (H, W) boolean mask that was filled.
    """
    H, W = img.shape[-2:]
    mask = polygon_mask(poly, H, W)
    img[..., mask] = value
    return mask


def polygon_mask(poly: np.ndarray, H: int, W: int) -> np.ndarray:
    mask = np.zeros((H, W), dtype=bool)
    poly = np.asarray(poly, dtype=np.float64)
    if not np.all(np.isfinite(poly)):
        return mask
    u0 = max(int(np.ceil(poly[:, 0].min())), 0)
    u1 = min(int(np.floor(poly[:, 0].max())), W - 1)
    v0 = max(int(np.ceil(poly[:, 1].min())), 0)
    v1 = min(int(np.floor(poly[:, 1].max())), H - 1)
    if u0 > u1 or v0 > v1:
        return mask
    uu, vv = np.meshgrid(np.arange(u0, u1 + 1), np.arange(v0, v1 + 1))
    x = poly[:, 0]
    y = poly[:, 1]
    area2 = np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    if area2 == 0:
        return mask
    sign = 1.0 if area2 > 0 else -1.0
    inside = np.ones(uu.shape, dtype=bool)
    for k in range(len(poly)):
        ax, ay = poly[k]
        bx, by = poly[(k + 1) % len(poly)]
        cross = (bx - ax) * (vv - ay) - (by - ay) * (uu - ax)
        inside &= sign * cross >= 0
    mask[v0:v1 + 1, u0:u1 + 1] = inside
    return mask


def billboard_corners(calib: CameraCalibration, x: float, y: float, half_width: float,
                      z0: float, z1: float) -> np.ndarray:
    """World corners of a vertical rectangle centred on (x, y) facing the camera, shape (4, 3).

    The rectangle is perpendicular to the horizontal line of sight, so it does not depend on camera roll.
    """
    c = calib.center
    sight = np.array([x - c[0], y - c[1]])
    n = np.linalg.norm(sight)
    if n < 1e-9:
        # directly below the camera: fall back to the image-right axis
        right = calib.R[0].copy()
        right[2] = 0.0
        right = right / max(np.linalg.norm(right), 1e-12)
    else:
        right = np.array([-sight[1] / n, sight[0] / n, 0.0])
    off = half_width * right
    base = np.array([x, y, 0.0])
    return np.array([
        base - off + [0, 0, z0], base + off + [0, 0, z0],
        base + off + [0, 0, z1], base - off + [0, 0, z1],
    ])


def project_quad(calib: CameraCalibration, corners: np.ndarray) -> np.ndarray | None:
    uv, z = project_points(calib, corners)
    if np.any(z <= 1e-6):
        return None
    return uv


def _background(rng: np.random.Generator, style: DomainStyle, view: int, H: int, W: int) -> np.ndarray:
    img = np.full((H, W), style.bg_mean, dtype=np.float64)
    if style.texture_amp > 0:
        trng = np.random.default_rng([int(style.texture_seed), view])
        tex = gaussian_filter(trng.standard_normal((H, W)), sigma=3.0, mode="wrap")
        tex /= tex.std() + 1e-12
        img += style.texture_amp * tex
    if style.bg_noise_std > 0:
        img += rng.normal(0.0, style.bg_noise_std, size=(H, W))
    return img


def sample_positions(rng: np.random.Generator, scene: SceneConfig) -> np.ndarray:
    count = int(rng.integers(scene.ped_count_min, scene.ped_count_max + 1))
    pts: list[np.ndarray] = []
    for _ in range(count):
        for _ in range(MAX_RETRIES):
            p = rng.uniform((0.0, 0.0), (scene.area_w, scene.area_h))
            if all(np.hypot(*(p - q)) >= scene.min_separation for q in pts):
                pts.append(p)
                break
        else:
            break
    return np.array(pts, dtype=np.float64).reshape(-1, 2)


def _check_grid_covers(scene: SceneConfig, grid: BevGrid) -> None:
    x1 = grid.origin_x + grid.h_g * grid.cell_size
    y1 = grid.origin_y + grid.w_g * grid.cell_size
    if grid.origin_x > 0 or grid.origin_y > 0 or x1 < scene.area_w or y1 < scene.area_h:
        raise GridTooSmall(
            f"grid [{grid.origin_x}, {x1}) x [{grid.origin_y}, {y1}) does not cover area "
            f"{scene.area_w} x {scene.area_h}")


def render_views(rng: np.random.Generator, positions: np.ndarray, scene: SceneConfig, rig: RigConfig,
                 style: DomainStyle) -> np.ndarray:
    H, W = rig.image_h, rig.image_w
    intensities = rng.uniform(style.ped_intensity_min, style.ped_intensity_max, size=len(positions))
    views = np.empty((rig.n_views, IMAGE_CHANNELS, H, W), dtype=np.float32)
    cg = np.asarray(style.channel_gain, dtype=np.float64)[:, None, None]
    for n, cam in enumerate(rig.cameras):
        img = _background(rng, style, n, H, W)
        depth = (np.column_stack([positions, np.zeros(len(positions))]) @ cam.R.T + cam.t)[:, 2] \
            if len(positions) else np.zeros(0)
        for k in np.argsort(-depth, kind="stable"):
            corners = billboard_corners(cam, positions[k, 0], positions[k, 1], scene.ped_radius,
                                        0.0, scene.ped_height)
            quad = project_quad(cam, corners)
            if quad is not None:
                fill_convex_polygon(img, quad, intensities[k])
        rgb = img[None] * cg
        views[n] = np.clip(style.gain * rgb + style.bias, 0.0, 1.0)
    return views


def sample_frame(rng: np.random.Generator, scene: SceneConfig, rig: RigConfig, style: DomainStyle,
                 grid: BevGrid, frame_id: int = 0) -> FrameRecord:
    _check_grid_covers(scene, grid)
    positions = sample_positions(rng, scene)
    views = render_views(rng, positions, scene, rig, style)
    i, j = grid.world_to_cell(positions[:, 0], positions[:, 1])
    gt = np.stack([i, j], axis=1).astype(np.int64).reshape(-1, 2)
    return FrameRecord(frame_id, views, gt)


# --- serialization -------------------------------------------------------

def write_view(path: Path, view: np.ndarray) -> None:
    C, H, W = view.shape
    with open(path, "wb") as f:
        f.write(VIEW_MAGIC + struct.pack("<III", C, H, W))
        f.write(np.ascontiguousarray(view, dtype="<f4").tobytes())


def read_view(path: Path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CorruptDataset(f"{path}: {e}") from e
    if len(raw) < 16 or raw[:4] != VIEW_MAGIC:
        raise CorruptDataset(f"{path}: bad magic or truncated header")
    C, H, W = struct.unpack("<III", raw[4:16])
    if len(raw) != 16 + 4 * C * H * W:
        raise CorruptDataset(f"{path}: expected {C}x{H}x{W} float32 payload, got {len(raw) - 16} bytes")
    return np.frombuffer(raw, dtype="<f4", offset=16).reshape(C, H, W).astype(np.float32)


def view_filename(frame_id: int, view: int) -> str:
    return f"f{frame_id:06d}_v{view}.mvf"


def split_indices(n_frames: int) -> tuple[list[int], list[int]]:
    """First 90% train, last 10% test."""
    n_train = (9 * n_frames) // 10
    return list(range(n_train)), list(range(n_train, n_frames))


def _workers() -> int:
    return max(1, int(os.environ.get("MVBEV_THREADS", "1")))


def generate_dataset(scene: SceneConfig, rig: RigConfig, style: DomainStyle, grid: BevGrid, seed: int,
                     n_frames: int, out_dir, with_labels: bool = True) -> dict:
    """Render ``n_frames`` frames into ``out_dir`` and return the manifest."""
    out = Path(out_dir)
    vdir = out / "views"
    try:
        vdir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create dataset directory {vdir}: {e}") from e
    _check_grid_covers(scene, grid)

    def make(fid: int) -> FrameRecord:
        return sample_frame(frame_rng(seed, fid), scene, rig, style, grid, fid)

    with ThreadPoolExecutor(max_workers=_workers()) as ex:
        frames = list(ex.map(make, range(n_frames)))

    label_lines = []
    for fr in frames:
        for n in range(fr.n_views):
            p = vdir / view_filename(fr.frame_id, n)
            try:
                write_view(p, fr.views[n])
            except OSError as e:
                raise OSError(f"cannot write {p}: {e}") from e
        label_lines.append(json.dumps({"frame": fr.frame_id, "cells": fr.gt_positions.tolist()}))

    train, test = split_indices(n_frames)
    manifest = {
        "format": "mvbev-dataset",
        "version": 1,
        "seed": int(seed),
        "n_frames": n_frames,
        "n_views": rig.n_views,
        "image": [IMAGE_CHANNELS, rig.image_h, rig.image_w],
        "frame_ids": list(range(n_frames)),
        "train": train,
        "test": test,
        "cameras": "cameras.json",
        "grid": "grid.json",
        "labels": "labels.jsonl" if with_labels else None,
        "views_dir": "views",
        "scene": asdict(scene),
        "style": asdict(style),
    }
    (out / "cameras.json").write_text(json.dumps([c.to_dict() for c in rig.cameras], indent=1))
    (out / "grid.json").write_text(json.dumps(grid.to_dict(), indent=1))
    if with_labels:
        (out / "labels.jsonl").write_text("".join(line + "\n" for line in label_lines))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


@dataclass
class Dataset:
    root: Path
    manifest: dict
    cameras: list[CameraCalibration]
    grid: BevGrid
    labels: dict[int, np.ndarray] | None
    _cache: dict[int, FrameRecord] = field(default_factory=dict, repr=False)

    @property
    def frame_ids(self) -> list[int]:
        return sorted(self.manifest["frame_ids"])

    @property
    def rig(self) -> RigConfig:
        return RigConfig(tuple(self.cameras), self.cameras[0].image_w, self.cameras[0].image_h)

    def __len__(self) -> int:
        return len(self.manifest["frame_ids"])

    def __iter__(self) -> Iterator[FrameRecord]:
        for fid in self.frame_ids:
            yield self.frame(fid)

    def frame(self, fid: int) -> FrameRecord:
        if fid in self._cache:
            return self._cache[fid]
        vdir = self.root / self.manifest.get("views_dir", "views")
        views = np.stack([read_view(vdir / view_filename(fid, n)) for n in range(self.manifest["n_views"])])
        expected = tuple(self.manifest["image"])
        if views.shape[1:] != expected:
            raise CorruptDataset(f"{vdir / view_filename(fid, 0)}: shape {views.shape[1:]} != manifest {expected}")
        gt = None if self.labels is None else self.labels.get(fid, np.zeros((0, 2), np.int64))
        fr = FrameRecord(fid, views, gt)
        self._cache[fid] = fr
        return fr

    def split(self, name: str) -> list[FrameRecord]:
        return [self.frame(fid) for fid in self.manifest[name]]


def _load_json(path: Path):
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CorruptDataset(f"{path}: {e}") from e


def dataset_hash(root) -> str:
    """SHA-256 over every file's relative path and bytes, in sorted path order."""
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def load_dataset(root, labels: bool = True) -> Dataset:
    root = Path(root)
    man_path = root / "manifest.json"
    manifest = _load_json(man_path)
    try:
        cams = [CameraCalibration.from_dict(c) for c in _load_json(root / manifest["cameras"])]
        grid = BevGrid.from_dict(_load_json(root / manifest["grid"]))
        n_frames = int(manifest["n_frames"])
        if len(manifest["frame_ids"]) != n_frames or len(cams) != int(manifest["n_views"]):
            raise CorruptDataset(f"{man_path}: counts disagree with contents")
    except CorruptDataset:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptDataset(f"{man_path}: {e}") from e

    label_map = None
    if labels and manifest.get("labels"):
        lpath = root / manifest["labels"]
        label_map = {}
        try:
            for ln, line in enumerate(lpath.read_text().splitlines(), 1):
                if not line.strip():
                    continue
                obj = json.loads(line)
                cells = np.asarray(obj["cells"], dtype=np.int64).reshape(-1, 2)
                if np.any(cells < 0) or np.any(cells[:, 0] >= grid.h_g) or np.any(cells[:, 1] >= grid.w_g):
                    raise CorruptDataset(f"{lpath}:{ln}: cell outside grid")
                label_map[int(obj["frame"])] = cells
        except CorruptDataset:
            raise
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as e:
            raise CorruptDataset(f"{lpath}: {e}") from e
    return Dataset(root, manifest, cams, grid, label_map)
