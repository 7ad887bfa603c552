"""Command-line front door.

Subcommands: ``train`` (one pre-training run; --seed is mandatory so no run
ever depends on hidden entropy), ``probe`` (fit/evaluate the linear probe on
a checkpoint), ``analyze`` (difficulty analyses on a checkpoint), ``run``
(preset or config-snapshot experiment), and ``sweep`` (cartesian parameter
grid). Any config key can be overridden with repeated ``--set key=value``.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import analysis as ana
from .checkpoint import load_checkpoint
from .config import apply_overrides, default_config, load_config, save_config
from .contrastive import Band
from .exceptions import CidlabError
from .experiments import (PRESETS, make_datasets, run_analyses, run_preset,
                          run_probe, run_single, sweep)


def _load_cfg(args):
    cfg = default_config()
    if getattr(args, "config", None):
        cfg = load_config(args.config, base=cfg)
    if getattr(args, "set", None):
        cfg = apply_overrides(cfg, args.set)
    return cfg


def _seeds(args):
    if getattr(args, "seed_list", None):
        return [int(s) for s in args.seed_list.split(",")]
    return list(range(args.seeds))


def cmd_train(args):
    cfg = _load_cfg(args)
    cfg["seed"] = args.seed
    metrics = run_single(cfg, args.out)
    if metrics:
        print(f"top1 {metrics['top1']:.4f}  top5 {metrics['top5']:.4f}")
    print(f"run written to {args.out}")
    return 0


def cmd_probe(args):
    cfg = _load_cfg(args)
    pair = load_checkpoint(args.checkpoint).pair
    train_ds, eval_ds, _ = make_datasets(cfg)
    result = run_probe(pair, train_ds, eval_ds, cfg)
    print(f"top1 {result.top1:.4f}  top5 {result.top5:.4f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        ana.write_csv(os.path.join(args.out, "probe.csv"),
                      ["seed", "top1", "top5"],
                      [(cfg["seed"], result.top1, result.top5)])
    return 0


def cmd_analyze(args):
    cfg = _load_cfg(args)
    if not cfg["analyses"]:
        cfg["analyses"] = ("bands", "band_sweep", "curve", "consistency",
                           "class_pairs")
    pair = load_checkpoint(args.checkpoint).pair
    train_ds, _, tree = make_datasets(cfg)
    os.makedirs(args.out, exist_ok=True)
    run_analyses(pair, train_ds, tree, cfg, args.out)
    print(f"analysis CSVs written to {args.out}")
    return 0


def cmd_run(args):
    if args.preset:
        summary, flags = run_preset(args.preset, args.out, _seeds(args),
                                    overrides=args.set or ())
        for condition, metric, mean, std, n in summary:
            print(f"{condition:<32} {metric}  {mean:.4f} +/- {std:.4f}  (n={n})")
        for flag in flags:
            print(flag)
        return 0
    cfg = _load_cfg(args)
    metrics = run_single(cfg, args.out)
    if metrics:
        print(f"top1 {metrics['top1']:.4f}  top5 {metrics['top5']:.4f}")
    return 0


def cmd_sweep(args):
    cfg = _load_cfg(args)
    rows = sweep(cfg, args.grid, args.out, _seeds(args))
    print(f"{len(rows)} runs written under {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cidlab",
        description="Contrastive instance discrimination at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True):
        if config:
            p.add_argument("--config", help="config file (flat key = value)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="one pre-training run (+probe/analyses)")
    add_common(p)
    p.add_argument("--seed", type=int, required=True,
                   help="training seed (mandatory; no hidden entropy)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("probe", help="linear probe on a checkpoint")
    p.add_argument("--config", help="config file (flat key = value)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="optional output directory")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("analyze", help="difficulty analyses on a checkpoint")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("run", help="run a preset or a config snapshot")
    add_common(p)
    p.add_argument("--preset", choices=sorted(PRESETS),
                   help="preset name (otherwise --config is run as-is)")
    p.add_argument("--seeds", type=int, default=3,
                   help="number of seeds 0..n-1 for presets")
    p.add_argument("--seed-list", help="explicit comma-separated seeds")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="cartesian grid of runs")
    add_common(p)
    p.add_argument("--grid", required=True,
                   help="axes like 'temperature=0.07|0.2;policy_band=all|hardest:0.001'")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--seed-list", help="explicit comma-separated seeds")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CidlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
