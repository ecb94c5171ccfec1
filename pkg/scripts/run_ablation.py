#!/usr/bin/env python3
"""Component ablation on one benchmark: baseline, frozen-teacher ST, mean teacher, full method, oracle.

    python scripts/run_ablation.py --config configs/styleshift.toml --out runs/ablation
    python scripts/run_ablation.py --config configs/styleshift.toml --alphas 0 0.9 0.99 1

``--alphas`` adds a sweep over the EMA coefficient on top of the full method.
"""

import argparse
import dataclasses
import logging

from mvbev.config import load_config
from mvbev.experiment import best_rows, format_table, read_metrics, run_adapt, run_pipeline, variant_config


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--alphas", type=float, nargs="*", default=[])
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    cfg = load_config(args.config, seed=args.seed, out_dir=args.out)
    run_pipeline(cfg, variants=("st", "st_mt", "mvuda"))
    for a in args.alphas:
        run_adapt(cfg, tag=f"alpha{a:g}", adapt_cfg=dataclasses.replace(variant_config(cfg, "mvuda"), alpha=a))
    rows = [r for r in best_rows(read_metrics(cfg.out_path / "metrics.csv")) if r["benchmark"].endswith("/target")]
    print(format_table(rows), end="")


if __name__ == "__main__":
    main()
