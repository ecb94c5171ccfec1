"""Turning an occupancy map into detections: greedy NMS and local-max extraction."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.ndimage import maximum_filter


@dataclass(frozen=True)
class Detection:
    i: int
    j: int
    score: float

    @property
    def cell(self) -> tuple[int, int]:
        return (self.i, self.j)


@dataclass(frozen=True)
class PostprocessConfig:
    tau: float = 0.4
    d_cells: float = 5.0
    k_d: int = 3

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if not self.d_cells > 0:
            raise ValueError("d_cells must be positive")
        if self.k_d < 1:
            raise ValueError("k_d must be at least 1")


def _sorted_candidates(occ: np.ndarray, mask: np.ndarray):
    ii, jj = np.nonzero(mask)
    s = occ[ii, jj]
    # descending score, ties by ascending (i, j)
    order = np.lexsort((jj, ii, -s))
    return ii[order], jj[order], s[order]


def _greedy(ii, jj, ss, too_close) -> list[Detection]:
    alive = np.ones(len(ii), dtype=bool)
    out = []
    for k in range(len(ii)):
        if not alive[k]:
            continue
        out.append(Detection(int(ii[k]), int(jj[k]), float(ss[k])))
        rest = slice(k + 1, None)
        alive[rest] &= ~too_close(ii[rest] - ii[k], jj[rest] - jj[k])
    return out


def vanilla_nms(occ: np.ndarray, tau: float, d_cells: float) -> list[Detection]:
    """Threshold at ``tau`` then greedily keep the best and drop everything within Euclidean ``d_cells``."""
    ii, jj, ss = _sorted_candidates(occ, occ > tau)
    d2 = d_cells * d_cells
    return _greedy(ii, jj, ss, lambda di, dj: di * di + dj * dj <= d2)


def local_max_candidates(occ: np.ndarray, tau: float, k_d: int) -> np.ndarray:
    """Boolean mask of cells above ``tau`` that are >= every cell in their clipped (2k_d+1)^2 window."""
    peak = maximum_filter(occ, size=2 * k_d + 1, mode="constant", cval=-np.inf)
    return (occ > tau) & (occ >= peak)


def local_max(occ: np.ndarray, tau: float, k_d: int) -> list[Detection]:
    """Local-maximum detections; plateaus are thinned so kept cells are > k_d apart (Chebyshev)."""
    ii, jj, ss = _sorted_candidates(occ, local_max_candidates(occ, tau, k_d))
    return _greedy(ii, jj, ss, lambda di, dj: np.maximum(np.abs(di), np.abs(dj)) <= k_d)


def postprocess(occ: np.ndarray, method: str, tau: float, d_cells: float = 5.0, k_d: int = 3) -> list[Detection]:
    if method == "vanilla":
        return vanilla_nms(occ, tau, d_cells)
    if method == "local_max":
        return local_max(occ, tau, k_d)
    raise ValueError(f"unknown post-processing method {method!r}")


def to_pseudo_label(dets: Iterable[Detection]) -> np.ndarray:
    cells = [d.cell for d in dets]
    return np.array(cells, dtype=np.int64).reshape(-1, 2)


def write_detections(path, dets: Iterable[Detection]) -> None:
    Path(path).write_text("".join(json.dumps({"i": d.i, "j": d.j, "score": d.score}) + "\n" for d in dets))


def read_detections(path) -> list[Detection]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            o = json.loads(line)
            out.append(Detection(int(o["i"]), int(o["j"]), float(o["score"])))
    return out
