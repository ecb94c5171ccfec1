"""End-to-end runs: dataset generation, baseline, adaptation, oracle, evaluation and reporting.

Everything for one benchmark lives under ``cfg.out_dir``::

    source/ target/           datasets
    baseline.mvp mvuda.mvp    checkpoints (one per method tag)
    metrics.csv               one row per (benchmark split, method, tau)
    <tag>/                    run logs and per-epoch checkpoints
    report.txt heatmaps/      written by the report step
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .evalmetrics import METRICS_COLUMNS, report_rows, sweep_maps, write_metrics_csv, predict_maps
from .selftrain import NO_AUG, AdaptConfig, Domain, adapt, pretrain_baseline
from .synthworld import Dataset, generate_dataset, load_dataset
from .tinynet import gaussian_soft_target, init_params, load_params, save_params

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
RUN_FILE = "run.json"


def r_cells(cfg: ExperimentConfig) -> float:
    return cfg.eval.radius_m / cfg.grid.cell_size


def run_gen(cfg: ExperimentConfig) -> dict:
    """Write the source and target datasets (both labeled; adaptation ignores target labels)."""
    out = {}
    for role, spec, path in (("source", cfg.source, cfg.source_path), ("target", cfg.target, cfg.target_path)):
        out[role] = generate_dataset(cfg.scene, spec.rig.build(), spec.style, cfg.grid, spec.seed, spec.n_frames, path)
    cfg.out_path.mkdir(parents=True, exist_ok=True)
    (cfg.out_path / RUN_FILE).write_text(json.dumps(
        {"name": cfg.name, "source": str(cfg.source_path), "target": str(cfg.target_path)}, indent=1, sort_keys=True))
    return out


def _load(path: Path, labels: bool = True) -> Dataset:
    if not (Path(path) / "manifest.json").exists():
        raise FileNotFoundError(f"no dataset at {path} (run `gen` first)")
    return load_dataset(path, labels=labels)


def _eval_rows(cfg: ExperimentConfig, params: dict, method: str, src: Dataset, tgt: Dataset) -> tuple[list, dict]:
    rows, summary = [], {}
    for split_name, ds in (("source", src), ("target", tgt)):
        frames = ds.split("test")
        if not frames:
            continue
        dom = Domain.from_dataset(ds)
        maps = predict_maps(params, frames, dom.tables)
        best, reps = sweep_maps(maps, [f.gt_positions for f in frames], r_cells(cfg), cfg.eval.tau_set)
        rows += report_rows(f"{cfg.name}/{split_name}", method, reps)
        summary[split_name] = {"tau": best, **dataclasses.asdict(reps[best])}
    return rows, summary


def upsert_metrics(out_dir: Path, rows: list[dict], method: str) -> Path:
    """Replace this method's rows in metrics.csv, keeping other methods in their existing order."""
    path = Path(out_dir) / METRICS_FILE
    kept = []
    if path.exists():
        with open(path, newline="") as f:
            kept = [r for r in csv.DictReader(f) if r["method"] != method]
    write_metrics_csv(path, kept + rows)
    return path


def evaluate_and_record(cfg: ExperimentConfig, params: dict, method: str, src: Dataset | None = None,
                        tgt: Dataset | None = None) -> dict:
    src = src or _load(cfg.source_path)
    tgt = tgt or _load(cfg.target_path)
    rows, summary = _eval_rows(cfg, params, method, src, tgt)
    upsert_metrics(cfg.out_path, rows, method)
    (cfg.out_path / f"{method}_summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    log.info("%s %s: %s", cfg.name, method, {k: round(v["moda"], 2) for k, v in summary.items()})
    return summary


def _supervised(cfg: ExperimentConfig, ds: Dataset, tag: str) -> dict:
    train, val = ds.split("train"), ds.split("test")
    if not train:
        raise ValueError(f"dataset {ds.root} has no training frames")
    if any(f.gt_positions is None for f in train):
        raise ValueError(f"dataset {ds.root} is unlabeled")
    logdir = cfg.out_path / tag
    logdir.mkdir(parents=True, exist_ok=True)
    params, _ = pretrain_baseline(train, val, Domain.from_dataset(ds), init_params(cfg.net, cfg.seed), cfg.train,
                                  cfg.seed, out_dir=logdir, tag=tag)
    save_params(cfg.out_path / f"{tag}.mvp", params)
    return params


def run_baseline(cfg: ExperimentConfig) -> dict:
    src, tgt = _load(cfg.source_path), _load(cfg.target_path)
    params = _supervised(cfg, src, "baseline")
    evaluate_and_record(cfg, params, "baseline", src, tgt)
    return params


def run_oracle(cfg: ExperimentConfig) -> dict:
    src, tgt = _load(cfg.source_path), _load(cfg.target_path)
    params = _supervised(cfg, tgt, "oracle")
    evaluate_and_record(cfg, params, "oracle", src, tgt)
    return params


def run_adapt(cfg: ExperimentConfig, tag: str = "mvuda", adapt_cfg: AdaptConfig | None = None,
              baseline_path: Path | None = None):
    acfg = adapt_cfg or cfg.adapt
    bpath = baseline_path or cfg.out_path / "baseline.mvp"
    if not Path(bpath).exists():
        raise FileNotFoundError(f"baseline checkpoint not found: {bpath} (run `train-baseline` first)")
    baseline = load_params(bpath)
    src = _load(cfg.source_path)
    tgt_unlabeled = _load(cfg.target_path, labels=False)
    logdir = cfg.out_path / tag
    logdir.mkdir(parents=True, exist_ok=True)
    params, hist = adapt(baseline, src.split("train"), src.split("test"), Domain.from_dataset(src),
                         tgt_unlabeled.split("train"), Domain.from_dataset(tgt_unlabeled), acfg, cfg.seed,
                         out_dir=logdir)
    save_params(cfg.out_path / f"{tag}.mvp", params)
    (logdir / "pseudo_label_counts.json").write_text(json.dumps(
        {"per_epoch": hist.pseudo_counts, "best_epoch": hist.best_epoch, "heldout": hist.heldout}, indent=1))
    evaluate_and_record(cfg, params, tag, src, _load(cfg.target_path))
    return params, hist


# Ablation variants, each applied on top of the configured [adapt] block.
VARIANTS = {
    "st": {"alpha": 1.0, "aug": NO_AUG},      # frozen teacher, no augmentation
    "st_mt": {"aug": NO_AUG},                 # mean teacher, no augmentation
    "mvuda": {},                              # mean teacher with the configured augmentation
}


def variant_config(cfg: ExperimentConfig, variant: str) -> AdaptConfig:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    return dataclasses.replace(cfg.adapt, **VARIANTS[variant])


def run_pipeline(cfg: ExperimentConfig, variants=("mvuda",), oracle: bool = True) -> dict:
    """gen, baseline, each adaptation variant, then the oracle. Returns {method: summary}."""
    run_gen(cfg)
    run_baseline(cfg)
    for v in variants:
        run_adapt(cfg, tag=v, adapt_cfg=variant_config(cfg, v))
    if oracle:
        run_oracle(cfg)
    methods = ["baseline", *variants] + (["oracle"] if oracle else [])
    return {m: json.loads((cfg.out_path / f"{m}_summary.json").read_text()) for m in methods}


def run_eval(cfg: ExperimentConfig, checkpoint: Path, tag: str) -> dict:
    return evaluate_and_record(cfg, load_params(checkpoint), tag)


# --- reporting ------------------------------------------------------------

def read_metrics(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def best_rows(rows: list[dict]) -> list[dict]:
    """Highest-MODA row per (benchmark, method); ties go to the smaller tau."""
    best: dict[tuple, dict] = {}
    for r in rows:
        key = (r["benchmark"], r["method"])
        cur = best.get(key)
        if cur is None or (float(r["moda"]), -float(r["tau"])) > (float(cur["moda"]), -float(cur["tau"])):
            best[key] = r
    return list(best.values())


def format_table(rows: list[dict]) -> str:
    head = f"{'benchmark':<24}{'method':<14}{'tau':>6}{'MODA':>8}{'MODP':>8}{'Prec':>8}{'Rec':>8}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['benchmark']:<24}{r['method']:<14}{float(r['tau']):>6.2f}{float(r['moda']):>8.1f}"
                     f"{float(r['modp']):>8.1f}{float(r['precision']):>8.1f}{float(r['recall']):>8.1f}")
    return "\n".join(lines) + "\n"


def write_pgm(path, occ: np.ndarray) -> None:
    """8-bit binary PGM, values in [0, 1] scaled to 0..255."""
    img = np.floor(np.clip(occ, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def run_report(out_dir, sigma_bev: float = 2.0, n_frames: int = 1) -> str:
    """Summary table over every metrics row plus predicted/label PGM heatmaps for each checkpoint."""
    out = Path(out_dir)
    mpath = out / METRICS_FILE
    if not mpath.exists():
        raise FileNotFoundError(f"no metrics at {mpath}")
    table = format_table(best_rows(read_metrics(mpath)))
    (out / "report.txt").write_text(table)
    run_path = out / RUN_FILE
    if run_path.exists():
        run = json.loads(run_path.read_text())
        tgt = load_dataset(run["target"])
        dom = Domain.from_dataset(tgt)
        frames = tgt.split("test")[:n_frames]
        hdir = out / "heatmaps"
        hdir.mkdir(exist_ok=True)
        for fr in frames:
            write_pgm(hdir / f"label_f{fr.frame_id:06d}.pgm", gaussian_soft_target(fr.gt_positions, sigma_bev, tgt.grid))
        for ck in sorted(out.glob("*.mvp")):
            params = load_params(ck)
            for fr, occ in zip(frames, predict_maps(params, frames, dom.tables)):
                write_pgm(hdir / f"{ck.stem}_f{fr.frame_id:06d}.pgm", occ)
    return table


__all__ = [
    "METRICS_COLUMNS", "best_rows", "evaluate_and_record", "format_table", "read_metrics", "read_pgm", "run_adapt",
    "run_baseline", "run_eval", "run_gen", "run_oracle", "run_pipeline", "run_report", "upsert_metrics",
    "variant_config", "write_pgm", "VARIANTS",
]
