"""Mean-teacher self-training: EMA teacher, augmentation, pseudo-labels, supervised pre-training.

A training step computes

    L = L_S(G(y_S), f_theta(A(x_S))) + lambda * L_T(G(h(f_phi(x_T))), f_theta(A(x_T)))

takes one SGD step on theta and then moves the teacher phi towards theta.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyDataset, NonFiniteValue, ShapeMismatch
from .geometry import BevGrid, CameraCalibration, ProjectionTable, build_projection_table
from .pseudolabel import postprocess, to_pseudo_label
from .synthworld import FrameRecord, RigConfig, fill_convex_polygon, project_quad
from .tinynet import (
    FEATURE_SCALE,
    backward,
    clip_grad_norm,
    copy_params,
    feature_shape,
    forward,
    gaussian_soft_target,
    mse_loss,
    one_cycle_lr,
    perspective_loss,
    save_params,
    sgd_step,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AugmentationSpec:
    dropview_prob: float = 0.0
    occlusion_count_range: tuple[int, int] = (0, 0)
    occluder_width_range: tuple[float, float] = (0.3, 1.0)
    occluder_height_range: tuple[float, float] = (0.5, 1.8)
    occluder_intensity_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if not 0.0 <= self.dropview_prob <= 1.0:
            raise ValueError("dropview_prob must lie in [0, 1]")
        lo, hi = self.occlusion_count_range
        if not 0 <= lo <= hi:
            raise ValueError("occlusion_count_range must satisfy 0 <= lo <= hi")

    @property
    def is_identity(self) -> bool:
        return self.dropview_prob == 0.0 and self.occlusion_count_range[1] == 0


NO_AUG = AugmentationSpec()
DV_3DR = AugmentationSpec(dropview_prob=0.5, occlusion_count_range=(1, 3))


@dataclass(frozen=True)
class LossConfig:
    sigma_bev: float = 2.0
    sigma_px: float = 3.0
    use_perspective_supervision: bool = False
    ped_height: float = 1.8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    max_lr: float = 0.1
    momentum: float = 0.5
    weight_decay: float = 5e-4
    grad_clip: float | None = 2.0
    aug: AugmentationSpec = NO_AUG
    loss: LossConfig = LossConfig()


@dataclass(frozen=True)
class AdaptConfig:
    alpha: float = 0.99
    lam: float = 1.0
    epochs: int = 5
    tau: float = 0.3
    k_d: int = 3
    d_cells: float = 5.0
    method: str = "local_max"
    aug: AugmentationSpec = NO_AUG
    max_lr: float = 0.1
    momentum: float = 0.5
    weight_decay: float = 5e-4
    grad_clip: float | None = 2.0
    patience: int = 2
    loss: LossConfig = LossConfig()
    select: str = "student"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.method not in ("vanilla", "local_max"):
            raise ValueError(f"unknown pseudo-label method {self.method!r}")
        if self.select not in ("student", "teacher"):
            raise ValueError("select must be 'student' or 'teacher'")


@dataclass
class Domain:
    """A camera rig on a BEV grid together with its precomputed projection tables."""

    cameras: tuple[CameraCalibration, ...]
    grid: BevGrid
    tables: tuple[ProjectionTable, ...] = ()

    def __post_init__(self):
        self.cameras = tuple(self.cameras)
        if not self.tables:
            c0 = self.cameras[0]
            hf, wf = feature_shape(c0.image_h, c0.image_w)
            self.tables = tuple(build_projection_table(c, self.grid, hf, wf, FEATURE_SCALE) for c in self.cameras)

    @property
    def rig(self) -> RigConfig:
        c0 = self.cameras[0]
        return RigConfig(self.cameras, c0.image_w, c0.image_h)

    @classmethod
    def from_dataset(cls, ds) -> "Domain":
        return cls(tuple(ds.cameras), ds.grid)


# --- teacher --------------------------------------------------------------

def ema_update(phi: dict, theta: dict, alpha: float) -> dict:
    if set(phi) != set(theta):
        raise ShapeMismatch("teacher and student parameter names differ")
    out = {}
    for k, p in phi.items():
        t = theta[k]
        if p.shape != t.shape:
            raise ShapeMismatch(f"{k}: teacher {p.shape} vs student {t.shape}")
        if alpha == 1.0:
            out[k] = p.copy()
        elif alpha == 0.0:
            out[k] = t.copy()
        else:
            out[k] = alpha * p + (1.0 - alpha) * t
    return out


def make_pseudo_label(phi: dict, frame: FrameRecord, tables: Sequence[ProjectionTable], cfg: AdaptConfig) -> np.ndarray:
    """Teacher prediction on the clean frame with every view active, post-processed to cells."""
    occ, _, _ = forward(phi, frame.views, tables)
    return to_pseudo_label(postprocess(occ, cfg.method, cfg.tau, cfg.d_cells, cfg.k_d))


# --- augmentation ---------------------------------------------------------

@dataclass(frozen=True)
class Occluder:
    x: float
    y: float
    width: float
    height: float
    along_x: bool
    intensity: float

    def corners(self) -> np.ndarray:
        h = self.width / 2
        dx, dy = (h, 0.0) if self.along_x else (0.0, h)
        return np.array([
            [self.x - dx, self.y - dy, 0.0], [self.x + dx, self.y + dy, 0.0],
            [self.x + dx, self.y + dy, self.height], [self.x - dx, self.y - dy, self.height],
        ])


def sample_occluders(rng: np.random.Generator, spec: AugmentationSpec, grid: BevGrid) -> list[Occluder]:
    lo, hi = spec.occlusion_count_range
    k = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
    out = []
    for _ in range(k):
        x = rng.uniform(grid.origin_x, grid.origin_x + grid.h_g * grid.cell_size)
        y = rng.uniform(grid.origin_y, grid.origin_y + grid.w_g * grid.cell_size)
        out.append(Occluder(
            float(x), float(y),
            float(rng.uniform(*spec.occluder_width_range)), float(rng.uniform(*spec.occluder_height_range)),
            bool(rng.integers(0, 2)), float(rng.uniform(*spec.occluder_intensity_range)),
        ))
    return out


def render_occluders(views: np.ndarray, occluders: Sequence[Occluder], cameras: Sequence[CameraCalibration]) -> None:
    """Paint occluders into ``views`` in place, far to near per view."""
    for n, cam in enumerate(cameras):
        depth = [float((cam.R @ np.array([o.x, o.y, 0.0]) + cam.t)[2]) for o in occluders]
        for k in np.argsort(-np.asarray(depth), kind="stable"):
            quad = project_quad(cam, occluders[k].corners())
            if quad is not None:
                fill_convex_polygon(views[n], quad, occluders[k].intensity)


def augment(frame: FrameRecord, rng: np.random.Generator, spec: AugmentationSpec, cameras, grid: BevGrid,
            return_occluders: bool = False):
    """DropView and 3D random occlusion. Returns (frame, active mask) and optionally the occluders."""
    N = frame.n_views
    active = [True] * N
    if spec.is_identity:
        return (frame, active, []) if return_occluders else (frame, active)
    if spec.dropview_prob > 0 and N > 1 and rng.random() < spec.dropview_prob:
        active[int(rng.integers(0, N))] = False
    occluders = sample_occluders(rng, spec, grid)
    if occluders:
        views = frame.views.copy()
        render_occluders(views, occluders, cameras)
        frame = FrameRecord(frame.frame_id, views, frame.gt_positions)
    return (frame, active, occluders) if return_occluders else (frame, active)


# --- losses and steps -----------------------------------------------------

@dataclass
class DomainTerm:
    loss: float
    grads: dict
    pred: np.ndarray
    target: np.ndarray
    persp_loss: float = 0.0


def domain_term(params: dict, frame: FrameRecord, positions, active, dom: Domain, lc: LossConfig) -> DomainTerm:
    """Loss and parameter gradients for one (possibly augmented) frame against cell positions."""
    occ, aux, cache = forward(params, frame.views, dom.tables, active, with_aux=lc.use_perspective_supervision)
    target = gaussian_soft_target(positions, lc.sigma_bev, dom.grid, occ.dtype)
    loss, g = mse_loss(target, occ)
    aux_grads = None
    lp = 0.0
    if lc.use_perspective_supervision:
        lp, aux_grads = perspective_loss(aux, positions, dom.cameras, dom.grid, lc.sigma_px, lc.ped_height,
                                         FEATURE_SCALE)
    grads = backward(params, cache, g, aux_grads)
    return DomainTerm(loss + lp, grads, occ, target, lp)


def _check_finite(params: dict) -> None:
    for k, v in params.items():
        if not np.all(np.isfinite(v)):
            raise NonFiniteValue(f"parameter {k} became non-finite")


@dataclass
class StepResult:
    theta: dict
    phi: dict
    state: dict
    loss: float
    loss_src: float
    loss_tgt: float
    pseudo: np.ndarray
    src: DomainTerm | None = None
    tgt: DomainTerm | None = None


def train_step(theta: dict, phi: dict, src_frame: FrameRecord, tgt_frame: FrameRecord | None,
               src_dom: Domain, tgt_dom: Domain | None, cfg: AdaptConfig, state: dict, lr: float,
               src_rng: np.random.Generator, tgt_rng: np.random.Generator | None) -> StepResult:
    """One optimisation step on the combined source + lambda * target loss, then the EMA update.

    Source and target augmentations draw from separate generators, so a step with
    ``lam == 0`` (which skips the target branch) matches a source-only step.
    """
    s_aug, s_act = augment(src_frame, src_rng, cfg.aug, src_dom.cameras, src_dom.grid)
    src = domain_term(theta, s_aug, src_frame.gt_positions, s_act, src_dom, cfg.loss)
    grads = src.grads
    total = src.loss
    tgt = None
    pseudo = np.zeros((0, 2), dtype=np.int64)
    if cfg.lam > 0 and tgt_frame is not None:
        pseudo = make_pseudo_label(phi, tgt_frame, tgt_dom.tables, cfg)
        t_aug, t_act = augment(tgt_frame, tgt_rng, cfg.aug, tgt_dom.cameras, tgt_dom.grid)
        tgt = domain_term(theta, t_aug, pseudo, t_act, tgt_dom, cfg.loss)
        grads = {k: g + cfg.lam * tgt.grads[k] for k, g in grads.items()}
        total = total + cfg.lam * tgt.loss
    grads, _ = clip_grad_norm(grads, cfg.grad_clip)
    theta, state = sgd_step(theta, grads, lr, state, cfg.momentum, cfg.weight_decay)
    _check_finite(theta)
    phi = ema_update(phi, theta, cfg.alpha)
    return StepResult(theta, phi, state, total, src.loss, 0.0 if tgt is None else tgt.loss, pseudo, src, tgt)


def heldout_loss(params: dict, frames: Sequence[FrameRecord], dom: Domain, sigma_bev: float) -> float:
    """Mean BEV loss on clean frames with all views active."""
    if not frames:
        return float("nan")
    total = 0.0
    for fr in frames:
        occ, _, _ = forward(params, fr.views, dom.tables)
        total += mse_loss(gaussian_soft_target(fr.gt_positions, sigma_bev, dom.grid, occ.dtype), occ)[0]
    return total / len(frames)


# --- training loops -------------------------------------------------------

@dataclass
class History:
    heldout: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    pseudo_counts: list[int] = field(default_factory=list)  # per epoch
    pseudo_labels: list[list[np.ndarray]] = field(default_factory=list)  # per epoch, optional


class _RunLog:
    COLUMNS = ("step", "lr", "loss_src", "loss_tgt", "n_pseudo_labels")

    def __init__(self, path):
        self.f = None
        if path is not None:
            self.f = open(path, "w", newline="")
            self.w = csv.writer(self.f, lineterminator="\n")
            self.w.writerow(self.COLUMNS)

    def row(self, step, lr, ls, lt, n):
        if self.f is not None:
            self.w.writerow([step, f"{lr:.8g}", f"{ls:.6f}", f"{lt:.6f}", n])

    def close(self):
        if self.f is not None:
            self.f.close()


def pretrain_baseline(train_frames: Sequence[FrameRecord], val_frames: Sequence[FrameRecord], dom: Domain,
                      params: dict, cfg: TrainConfig, seed: int, out_dir=None, tag: str = "baseline"):
    """Supervised training on labeled frames; returns (best params by held-out loss, history)."""
    if not train_frames:
        raise EmptyDataset("no labeled training frames")
    order_rng, aug_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    total = cfg.epochs * len(train_frames)
    theta = copy_params(params)
    state: dict = {}
    step = 0
    hist = History()
    best, best_loss = copy_params(theta), np.inf
    out = Path(out_dir) if out_dir is not None else None
    runlog = _RunLog(out / f"{tag}_log.csv" if out else None)
    acfg = AdaptConfig(lam=0.0, alpha=1.0, aug=cfg.aug, max_lr=cfg.max_lr, momentum=cfg.momentum,
                       weight_decay=cfg.weight_decay, grad_clip=cfg.grad_clip, loss=cfg.loss)
    try:
        for epoch in range(cfg.epochs):
            ep_loss = 0.0
            for idx in order_rng.permutation(len(train_frames)):
                lr = one_cycle_lr(step, total, cfg.max_lr)
                r = train_step(theta, theta, train_frames[idx], None, dom, None, acfg, state, lr, aug_rng, None)
                theta, state = r.theta, r.state
                ep_loss += r.loss
                runlog.row(step, lr, r.loss_src, 0.0, 0)
                step += 1
            hist.train_loss.append(ep_loss / len(train_frames))
            hl = heldout_loss(theta, val_frames, dom, cfg.loss.sigma_bev) if val_frames else hist.train_loss[-1]
            hist.heldout.append(hl)
            log.info("%s epoch %d train %.4f heldout %.4f", tag, epoch, hist.train_loss[-1], hl)
            if hl < best_loss:
                best, best_loss, hist.best_epoch = copy_params(theta), hl, epoch
            if out:
                save_params(out / f"{tag}_epoch{epoch:02d}.mvp", theta)
    finally:
        runlog.close()
    return best, hist


def adapt(baseline: dict, src_train: Sequence[FrameRecord], src_val: Sequence[FrameRecord], src_dom: Domain,
          tgt_train: Sequence[FrameRecord] | None, tgt_dom: Domain | None, cfg: AdaptConfig, seed: int,
          out_dir=None, record_pseudo: bool = False):
    """Mean-teacher adaptation from ``baseline``; returns (best params by held-out source loss, history).

    Target frames are used without labels. Each epoch walks max(|S|, |T|) pairs,
    cycling the shorter set.
    """
    if not src_train:
        raise EmptyDataset("no labeled source frames")
    if tgt_train is not None and len(tgt_train) == 0:
        raise EmptyDataset("no target frames")
    tgt_train = [fr.unlabeled() for fr in tgt_train] if tgt_train is not None else None
    ss = np.random.SeedSequence(seed).spawn(4)
    ord_s, ord_t, aug_s, aug_t = (np.random.default_rng(s) for s in ss)
    n_s = len(src_train)
    n_t = len(tgt_train) if tgt_train is not None else 0
    per_epoch = max(n_s, n_t)
    total = cfg.epochs * per_epoch
    theta, phi = copy_params(baseline), copy_params(baseline)
    state: dict = {}
    hist = History()
    best, best_loss = copy_params(baseline), np.inf
    since_best = 0
    step = 0
    out = Path(out_dir) if out_dir is not None else None
    runlog = _RunLog(out / "adapt_log.csv" if out else None)
    try:
        for epoch in range(cfg.epochs):
            perm_s = ord_s.permutation(n_s)
            perm_t = ord_t.permutation(n_t) if n_t else None
            n_pseudo = 0
            labels_epoch = []
            ep_loss = 0.0
            for k in range(per_epoch):
                lr = one_cycle_lr(step, total, cfg.max_lr)
                tf = tgt_train[perm_t[k % n_t]] if n_t else None
                r = train_step(theta, phi, src_train[perm_s[k % n_s]], tf, src_dom, tgt_dom, cfg, state, lr,
                               aug_s, aug_t)
                theta, phi, state = r.theta, r.phi, r.state
                n_pseudo += len(r.pseudo)
                ep_loss += r.loss
                if record_pseudo:
                    labels_epoch.append(r.pseudo)
                runlog.row(step, lr, r.loss_src, r.loss_tgt, len(r.pseudo))
                step += 1
            hist.pseudo_counts.append(n_pseudo)
            hist.train_loss.append(ep_loss / per_epoch)
            if record_pseudo:
                hist.pseudo_labels.append(labels_epoch)
            chosen = theta if cfg.select == "student" else phi
            hl = heldout_loss(chosen, src_val, src_dom, cfg.loss.sigma_bev) if src_val else hist.train_loss[-1]
            hist.heldout.append(hl)
            log.info("adapt epoch %d loss %.4f heldout %.4f pseudo %d", epoch, hist.train_loss[-1], hl, n_pseudo)
            if out:
                save_params(out / f"adapt_epoch{epoch:02d}.mvp", chosen)
            if hl < best_loss:
                best, best_loss, hist.best_epoch, since_best = copy_params(chosen), hl, epoch, 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    log.info("early stop after epoch %d", epoch)
                    break
    finally:
        runlog.close()
    if cfg.epochs == 0:
        return copy_params(baseline), hist
    return best, hist
