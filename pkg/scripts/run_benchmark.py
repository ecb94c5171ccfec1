#!/usr/bin/env python3
"""Run one or both bundled benchmarks end to end and print the target-split summary.

    python scripts/run_benchmark.py                  # styleshift and rigshift into runs/
    python scripts/run_benchmark.py styleshift --out /tmp/ss
"""

import argparse
import logging
import time
from pathlib import Path

from mvbev.config import load_config
from mvbev.experiment import run_pipeline, run_report

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("benchmarks", nargs="*", default=["styleshift", "rigshift"])
    p.add_argument("--out", help="output directory (one benchmark only)")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.out and len(args.benchmarks) != 1:
        p.error("--out needs exactly one benchmark")
    for name in args.benchmarks:
        cfg = load_config(CONFIGS / f"{name}.toml", seed=args.seed, out_dir=args.out)
        t0 = time.perf_counter()
        summary = run_pipeline(cfg)
        print(f"== {name} ({time.perf_counter() - t0:.0f} s, outputs in {cfg.out_dir})")
        for method, s in summary.items():
            t = s["target"]
            print(f"  {method:<10} target MODA {t['moda']:6.1f} at tau {t['tau']:.2f}"
                  f"  (precision {t['precision']:.1f}, recall {t['recall']:.1f})")
        run_report(cfg.out_dir)


if __name__ == "__main__":
    main()
