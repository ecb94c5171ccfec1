"""Experiment configuration: one TOML file per benchmark."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields, is_dataclass
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .evalmetrics import DEFAULT_TAUS
from .geometry import BevGrid, look_at
from .selftrain import AdaptConfig, AugmentationSpec, LossConfig, TrainConfig
from .synthworld import DomainStyle, RigConfig, SceneConfig, ring_rig
from .tinynet import NetConfig


@dataclass(frozen=True)
class RigSpec:
    """A ring of cameras (optionally a subset of it) or an explicit camera list."""

    kind: str = "ring"
    n_cams: int = 4
    center: tuple[float, float] = (3.0, 3.0)
    radius: float = 7.0
    height: float = 3.5
    heights: tuple[float, ...] = ()
    rolls: tuple[float, ...] = ()
    fx: float = 90.0
    image_w: int = 128
    image_h: int = 96
    start_angle_deg: float = 45.0
    use: tuple[int, ...] = ()
    cameras: tuple[dict, ...] = ()

    def build(self) -> RigConfig:
        """``heights`` and ``rolls`` (degrees) are cycled over the ring's cameras when given."""
        cx, cy = (self.image_w - 1) / 2, (self.image_h - 1) / 2
        if self.kind == "ring":
            if not (self.heights or self.rolls):
                rig = ring_rig(self.n_cams, self.center, self.radius, self.height, self.fx, self.image_w,
                               self.image_h, self.start_angle_deg)
            else:
                cams = []
                for k in range(self.n_cams):
                    a = np.deg2rad(self.start_angle_deg + 360.0 * k / self.n_cams)
                    h = self.heights[k % len(self.heights)] if self.heights else self.height
                    roll = self.rolls[k % len(self.rolls)] if self.rolls else 0.0
                    pos = (self.center[0] + self.radius * np.cos(a), self.center[1] + self.radius * np.sin(a), h)
                    cams.append(look_at(pos, (*self.center, 0.0), self.fx, self.fx, cx, cy, self.image_w,
                                        self.image_h, roll))
                rig = RigConfig(tuple(cams), self.image_w, self.image_h)
        elif self.kind == "explicit":
            cams = [look_at(c["position"], c["target"], c.get("fx", self.fx), c.get("fx", self.fx), cx, cy,
                            self.image_w, self.image_h, c.get("roll_deg", 0.0))
                    for c in self.cameras]
            rig = RigConfig(tuple(cams), self.image_w, self.image_h)
        else:
            raise ValueError(f"unknown rig kind {self.kind!r}")
        return rig.subset(self.use) if self.use else rig


@dataclass(frozen=True)
class DomainSpec:
    n_frames: int = 200
    seed: int = 1
    rig: RigSpec = RigSpec()
    style: DomainStyle = DomainStyle()


@dataclass(frozen=True)
class EvalSpec:
    tau_set: tuple[float, ...] = DEFAULT_TAUS
    radius_m: float = 0.5


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "bench"
    seed: int = 0
    out_dir: str = "runs/bench"
    source_dir: str = ""
    target_dir: str = ""
    grid: BevGrid = BevGrid(0.0, 0.0, 0.1, 60, 60)
    scene: SceneConfig = SceneConfig()
    source: DomainSpec = DomainSpec()
    target: DomainSpec = DomainSpec(seed=2)
    net: NetConfig = NetConfig()
    train: TrainConfig = TrainConfig()
    adapt: AdaptConfig = AdaptConfig()
    eval: EvalSpec = EvalSpec()

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir)

    @property
    def source_path(self) -> Path:
        return Path(self.source_dir) if self.source_dir else self.out_path / "source"

    @property
    def target_path(self) -> Path:
        return Path(self.target_dir) if self.target_dir else self.out_path / "target"


def _update(default, data, where: str):
    if not isinstance(data, dict):
        raise ValueError(f"[{where}] must be a table")
    names = {f.name for f in fields(default)}
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key not in names:
            raise ValueError(f"unknown key {where}.{key}")
        kwargs[key] = _coerce(getattr(default, key), value, f"{where}.{key}")
    return dataclasses.replace(default, **kwargs)


def _coerce(default, value, where):
    if is_dataclass(default):
        return _update(default, value, where)
    if isinstance(value, list):
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    if isinstance(default, float) and isinstance(value, int):
        return float(value)
    return value


def from_dict(data: dict) -> ExperimentConfig:
    return _update(ExperimentConfig(), data, "config")


def load_config(path, seed: int | None = None, out_dir: str | None = None,
                overrides: dict | None = None) -> ExperimentConfig:
    """Parse a TOML config. Relative paths inside it resolve against the working directory."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, "rb") as f:
        data = tomllib.load(f)
    for dotted, value in (overrides or {}).items():
        node = data
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    cfg = from_dict(data)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    if out_dir is not None:
        cfg = dataclasses.replace(cfg, out_dir=out_dir)
    return cfg


def with_adapt(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return dataclasses.replace(cfg, adapt=dataclasses.replace(cfg.adapt, **changes))


__all__ = [
    "AdaptConfig", "AugmentationSpec", "DomainSpec", "EvalSpec", "ExperimentConfig", "LossConfig", "RigSpec",
    "TrainConfig", "from_dict", "load_config", "with_adapt",
]
