"""MODA / MODP / precision / recall with distance-gated optimal matching, and the tau sweep."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NoGroundTruth
from .pseudolabel import Detection, postprocess

DEFAULT_TAUS = tuple(round(0.05 * k, 2) for k in range(1, 20))
METRICS_COLUMNS = ("benchmark", "method", "tau", "moda", "modp", "precision", "recall")


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    matched_dist_scores: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class MetricsReport:
    moda: float
    modp: float
    precision: float
    recall: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    gt: int = 0


def _as_cells(items) -> np.ndarray:
    items = [] if items is None else items
    if len(items) and isinstance(items[0], Detection):
        items = [d.cell for d in items]
    return np.asarray(items, dtype=np.float64).reshape(-1, 2)


def match_frame(dets: Sequence[Detection] | np.ndarray, gts, r_cells: float) -> MatchResult:
    """Maximum-cardinality, then minimum-distance, matching of detections to ground truth within ``r_cells``."""
    if not r_cells > 0:
        raise ValueError("gate radius must be positive")
    D = _as_cells(dets)
    G = _as_cells(gts)
    if len(D) == 0 or len(G) == 0:
        return MatchResult(0, len(D), len(G), [])
    dist = np.hypot(D[:, None, 0] - G[None, :, 0], D[:, None, 1] - G[None, :, 1])
    gated = dist <= r_cells
    # every real pair costs less than any single padded pair, so cardinality wins first
    big = 1.0 + r_cells * (min(len(D), len(G)) + 1)
    cost = np.where(gated, dist, big)
    rows, cols = linear_sum_assignment(cost)
    keep = gated[rows, cols]
    scores = [float(1.0 - dist[r, c] / r_cells) for r, c in zip(rows[keep], cols[keep])]
    tp = len(scores)
    return MatchResult(tp, len(D) - tp, len(G) - tp, scores)


def aggregate(results: Iterable[MatchResult]) -> MetricsReport:
    results = list(results)
    tp = sum(r.tp for r in results)
    fp = sum(r.fp for r in results)
    fn = sum(r.fn for r in results)
    gt = tp + fn
    if gt == 0:
        raise NoGroundTruth("MODA and recall are undefined without ground truth")
    dist_sum = sum(sum(r.matched_dist_scores) for r in results)
    moda = 100.0 * (1.0 - (fp + fn) / gt)
    precision = 100.0 * tp / (tp + fp) if tp + fp > 0 else 100.0
    recall = 100.0 * tp / gt
    modp = 100.0 * dist_sum / tp if tp > 0 else 0.0
    return MetricsReport(moda, modp, precision, recall, tp, fp, fn, gt)


def predict_maps(params, frames, tables) -> list[np.ndarray]:
    from .tinynet import forward

    return [forward(params, fr.views, tables)[0] for fr in frames]


def evaluate_maps(maps, gts, tau: float, r_cells: float, method: str = "vanilla", d_cells: float | None = None,
                  k_d: int = 3) -> MetricsReport:
    d = r_cells if d_cells is None else d_cells
    return aggregate(match_frame(postprocess(m, method, tau, d, k_d), g, r_cells) for m, g in zip(maps, gts))


def sweep_maps(maps, gts, r_cells: float, tau_set=DEFAULT_TAUS, method: str = "vanilla",
               d_cells: float | None = None, k_d: int = 3):
    """Returns (best tau, {tau: report}); the best tau maximises MODA, ties go to the smaller tau."""
    reports = {float(t): evaluate_maps(maps, gts, float(t), r_cells, method, d_cells, k_d) for t in tau_set}
    best = min(reports, key=lambda t: (-reports[t].moda, t))
    return best, reports


def sweep_tau(params, frames, tables, method: str = "vanilla", tau_set=DEFAULT_TAUS, r_cells: float = 5.0,
              d_cells: float | None = None, k_d: int = 3):
    """Forward every labeled frame once, then evaluate each tau."""
    frames = list(frames)
    maps = predict_maps(params, frames, tables)
    return sweep_maps(maps, [fr.gt_positions for fr in frames], r_cells, tau_set, method, d_cells, k_d)


def write_metrics_csv(path, rows: Iterable[dict], append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=METRICS_COLUMNS, lineterminator="\n")
        if new:
            w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in METRICS_COLUMNS})


def _fmt(v):
    return f"{v:.4f}" if isinstance(v, float) else v


def report_rows(benchmark: str, method: str, reports: dict) -> list[dict]:
    return [{"benchmark": benchmark, "method": method, "tau": float(t), "moda": r.moda, "modp": r.modp,
             "precision": r.precision, "recall": r.recall} for t, r in sorted(reports.items())]
