"""Command-line runner: ``mvbev {gen,train-baseline,adapt,oracle,eval,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import experiment
from .config import load_config
from .errors import MvBevError
from .synthworld import dataset_hash

log = logging.getLogger("mvbev")


def _parse_set(items: list[str]) -> dict:
    """``--set adapt.tau=0.2`` style overrides; values are parsed as JSON when possible."""
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            out[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            out[key.strip()] = raw
    return out


def _cfg(args):
    return load_config(args.config, seed=args.seed, out_dir=args.out, overrides=_parse_set(args.set))


def cmd_gen(args) -> None:
    cfg = _cfg(args)
    for role, man in experiment.run_gen(cfg).items():
        path = cfg.source_path if role == "source" else cfg.target_path
        print(f"{role}: {man['n_frames']} frames, {man['n_views']} views, hash {dataset_hash(path)[:16]} -> {path}")


def cmd_train_baseline(args) -> None:
    cfg = _cfg(args)
    experiment.run_baseline(cfg)
    print(f"wrote {cfg.out_path / 'baseline.mvp'}")


def cmd_adapt(args) -> None:
    cfg = _cfg(args)
    tag = args.tag or args.variant
    _, hist = experiment.run_adapt(cfg, tag=tag, adapt_cfg=experiment.variant_config(cfg, args.variant))
    print(f"wrote {cfg.out_path / (tag + '.mvp')} (best epoch {hist.best_epoch}, "
          f"pseudo-labels per epoch {hist.pseudo_counts})")


def cmd_oracle(args) -> None:
    cfg = _cfg(args)
    experiment.run_oracle(cfg)
    print(f"wrote {cfg.out_path / 'oracle.mvp'}")


def cmd_eval(args) -> None:
    cfg = _cfg(args)
    ckpt = Path(args.checkpoint) if args.checkpoint else cfg.out_path / f"{args.tag}.mvp"
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    summary = experiment.run_eval(cfg, ckpt, args.tag)
    for split, s in summary.items():
        print(f"{split}: tau={s['tau']:.2f} MODA={s['moda']:.1f} MODP={s['modp']:.1f}")


def cmd_report(args) -> None:
    out = args.out
    if out is None:
        if args.config is None:
            raise ValueError("report needs --out or --config")
        out = _cfg(args).out_dir
    sys.stdout.write(experiment.run_report(out))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvbev", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    handlers = {
        "gen": cmd_gen, "train-baseline": cmd_train_baseline, "adapt": cmd_adapt,
        "oracle": cmd_oracle, "eval": cmd_eval, "report": cmd_report,
    }
    for name, fn in handlers.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=name != "report")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        if name == "adapt":
            sp.add_argument("--variant", default="mvuda", choices=sorted(experiment.VARIANTS))
            sp.add_argument("--tag", help="method name for outputs (defaults to the variant)")
        if name == "eval":
            sp.add_argument("--tag", default="mvuda")
            sp.add_argument("--checkpoint")
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    threads = os.environ.get("MVBEV_THREADS")
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(int(threads)):
                args.func(args)
        else:
            args.func(args)
    except (MvBevError, OSError, ValueError, KeyError) as exc:
        print(f"mvbev {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
