"""Experiment presets, the single-run pipeline, and sweep orchestration.

A run directory is self-describing: it holds a fully resolved config
snapshot, the checkpoint, per-step metrics, probe results, and any analysis
CSVs; re-running on the snapshot reproduces every CSV byte for byte. A
preset expands into named conditions crossed with seeds, writes a manifest
(one line per run) and a summary of mean +/- std across seeds.
"""

from __future__ import annotations

import csv
import itertools
import os
import re
from dataclasses import dataclass

import numpy as np

from . import analysis as ana
from .checkpoint import load_checkpoint
from .config import (apply_overrides, config_to_text, default_config,
                     parse_value, save_config, train_config_from_config,
                     validate_config)
from .data import Dataset, gen_hierarchical_gaussian, load_cifar10_batch
from .exceptions import ConfigError, GridTooLargeError
from .contrastive import Band
from .encoder import forward_base
from .numerics import rng_from_seed
from .probe import evaluate_probe, fit_linear_probe
from .trainer import train

MAX_GRID_POINTS = 256
STREAM_DATA_SPLIT = 9


def make_datasets(cfg):
    """Datasets for a run: (pretrain/probe-train split, held-out eval, tree).

    Synthetic data generates train+eval instances per class in one draw so
    both splits share the same class means; CIFAR-10 loads the configured
    batch files (no class tree, so LCA analyses are skipped).
    """
    if cfg["data_source"] == "synthetic":
        per_class = cfg["data_instances_per_class"] + cfg["data_eval_per_class"]
        dataset, tree = gen_hierarchical_gaussian(
            tree_depth=cfg["data_tree_depth"], dims=cfg["data_dims"],
            level_sigmas=cfg["data_level_sigmas"],
            within_class_sigma=cfg["data_within_sigma"],
            instances_per_class=per_class,
            rng=rng_from_seed(cfg["data_seed"], STREAM_DATA_SPLIT))
        train_idx, eval_idx = [], []
        for label in range(2 ** cfg["data_tree_depth"]):
            start = label * per_class
            train_idx.extend(range(start, start + cfg["data_instances_per_class"]))
            eval_idx.extend(range(start + cfg["data_instances_per_class"],
                                  start + per_class))
        return dataset.subset(train_idx), dataset.subset(eval_idx), tree
    train_ds = Dataset.from_instances(load_cifar10_batch(cfg["data_cifar_train"]))
    if cfg["data_cifar_eval"]:
        eval_ds = Dataset.from_instances(load_cifar10_batch(cfg["data_cifar_eval"]))
        eval_ds.instance_ids += len(train_ds)
    else:
        eval_ds = train_ds
    return train_ds, eval_ds, None


def run_probe(pair, train_ds, eval_ds, cfg):
    reprs = forward_base(pair.query_encoder, train_ds.features)
    model = fit_linear_probe(reprs, train_ds.labels, epochs=cfg["probe_epochs"],
                             lr=cfg["probe_learning_rate"])
    eval_reprs = forward_base(pair.query_encoder, eval_ds.features)
    return evaluate_probe(model, eval_reprs, eval_ds.labels)


def run_analyses(pair, train_ds, tree, cfg, out_dir):
    """Write the analysis CSVs named in cfg['analyses'] to ``out_dir``."""
    names = cfg["analyses"]
    if not names:
        return
    rng = rng_from_seed(cfg["analysis_seed"])
    queries, negatives = ana.sample_difficulty_instances(
        train_ds, cfg["analysis_queries"], cfg["analysis_negatives"], rng)
    dm = ana.build_difficulty_matrix(
        pair, queries, negatives,
        use_momentum_encoder=cfg["analysis_use_momentum_encoder"])
    frac = cfg["analysis_hard_fraction"]
    if "bands" in names:
        rows = []
        for lo, hi in ((1.0 - frac, 1.0), (0.0, 1.0 - frac)):
            band = Band.range(lo, hi)
            lca = ana.band_mean_lca(dm, tree, band) if tree is not None else None
            rows.append((lo, hi, ana.band_same_class_fraction(dm, band), lca))
        ana.write_band_semantics_csv(os.path.join(out_dir, "bands.csv"), rows)
    if "band_sweep" in names:
        rows = []
        for i in range(20):
            lo, hi = i * 0.05, (i + 1) * 0.05
            band = Band.range(lo, hi)
            lca = ana.band_mean_lca(dm, tree, band) if tree is not None else None
            rows.append((lo, hi, ana.band_same_class_fraction(dm, band), lca))
        ana.write_band_semantics_csv(os.path.join(out_dir, "band_sweep.csv"), rows)
    if "curve" in names:
        curve = ana.difficulty_dot_curve(dm, cfg["analysis_curve_points"])
        ana.write_curve_csv(os.path.join(out_dir, "difficulty_curve.csv"), curve)
    if "consistency" in names:
        real = ana.hard_frequency_histogram(dm, frac, cfg["analysis_n_bins"])
        shuffled = ana.shuffled_baseline_histogram(
            dm, frac, cfg["analysis_n_bins"], rng=rng,
            n_shuffles=cfg["analysis_n_shuffles"])
        ana.write_consistency_csv(os.path.join(out_dir, "consistency.csv"),
                                  real, shuffled)
        ana.write_csv(os.path.join(out_dir, "consistency_stats.csv"),
                      ["real_variance", "shuffled_variance", "ratio"],
                      [(real.variance, shuffled.variance,
                        real.variance / shuffled.variance if shuffled.variance else float("inf"))])
    if "class_pairs" in names:
        from .encoder import embed
        vecs = embed(pair.query_encoder, train_ds.features)
        result = ana.class_pair_mean_dots(vecs, train_ds.labels)
        ana.write_class_pairs_csv(os.path.join(out_dir, "class_pairs.csv"), result)
        ana.write_class_pair_extremes_csv(
            os.path.join(out_dir, "class_pair_extremes.csv"), result)


def run_single(cfg, out_dir):
    """Train, probe, analyze one config; returns {"top1": .., "top5": ..}
    (empty when run_probe is off)."""
    validate_config(cfg)
    os.makedirs(out_dir, exist_ok=True)
    save_config(os.path.join(out_dir, "config.cfg"), cfg)
    train_ds, eval_ds, tree = make_datasets(cfg)
    train_config = train_config_from_config(cfg, input_dim=train_ds.dim)
    pair, _ = train(train_config, train_ds, out_dir=out_dir)
    metrics = {}
    if cfg["run_probe"]:
        result = run_probe(pair, train_ds, eval_ds, cfg)
        metrics = {"top1": result.top1, "top5": result.top5}
        ana.write_csv(os.path.join(out_dir, "probe.csv"),
                      ["seed", "top1", "top5"],
                      [(cfg["seed"], result.top1, result.top5)])
        ana.write_csv(os.path.join(out_dir, "probe_per_class.csv"),
                      ["seed", "class", "accuracy"],
                      [(cfg["seed"], c, a)
                       for c, a in sorted(result.per_class_accuracy.items())])
    run_analyses(pair, train_ds, tree, cfg, out_dir)
    return metrics


@dataclass(frozen=True)
class ExperimentPreset:
    """A named family of conditions; each condition fully determines one
    training + evaluation config via overrides on the defaults."""

    name: str
    description: str
    conditions: tuple  # of (condition_name, {key: value})
    base: tuple = ()   # extra (key, value) pairs applied to every condition


def _keep_band(name, lo, hi):
    return (name, {"policy_mode": "keep", "policy_band": Band.range(lo, hi),
                   "policy_class": "any", "policy_replacement": "omit"})


def _drop_band(name, lo, hi):
    return (name, {"policy_mode": "drop", "policy_band": Band.range(lo, hi),
                   "policy_class": "any", "policy_replacement": "omit"})


def _table1_conditions(temperature):
    t = f"t{temperature}"
    shared = {"temperature": temperature, "policy_replacement": "replace_with_older"}
    rows = [
        (f"{t}_baseline", {"policy_mode": "keep", "policy_band": Band.all(),
                           "policy_class": "any", "policy_replacement": "omit"}),
        (f"{t}_drop_hardest_0.1pct", {"policy_mode": "drop",
                                      "policy_band": Band.hardest(0.001),
                                      "policy_class": "any"}),
        (f"{t}_drop_same_class", {"policy_mode": "drop", "policy_band": Band.all(),
                                  "policy_class": "same"}),
        (f"{t}_drop_hardest_same", {"policy_mode": "drop",
                                    "policy_band": Band.hardest(0.001),
                                    "policy_class": "same"}),
        (f"{t}_drop_hardest_different", {"policy_mode": "drop",
                                         "policy_band": Band.hardest(0.001),
                                         "policy_class": "different"}),
        (f"{t}_drop_easiest_same", {"policy_mode": "drop",
                                    "policy_band": Band.easiest(0.999),
                                    "policy_class": "same"}),
    ]
    out = []
    for name, overrides in rows:
        merged = dict(shared)
        merged.update(overrides)
        merged["temperature"] = temperature
        out.append((name, merged))
    return out


def build_presets():
    fig2_bands = [(0.0, 0.90), (0.0, 0.95), (0.85, 0.90), (0.90, 0.95),
                  (0.95, 1.0), (0.85, 1.0), (0.90, 1.0), (0.0, 1.0)]
    sufficiency = tuple(
        _keep_band(f"keep_{int(lo * 100):02d}_{int(hi * 100):03d}", lo, hi)
        for lo, hi in fig2_bands)
    necessity = tuple(
        [_keep_band("baseline", 0.0, 1.0)]
        + [_drop_band(f"drop_{int(lo * 100):02d}_{int(hi * 100):03d}", lo, hi)
           for lo, hi in [(0.85, 0.90), (0.90, 0.95), (0.95, 1.0),
                          (0.85, 1.0), (0.90, 1.0)]])
    hardest_temps = []
    for temperature in (0.07, 0.1, 0.2):
        hardest_temps.append((f"t{temperature}_baseline",
                              {"temperature": temperature}))
        hardest_temps.append((f"t{temperature}_drop_hardest_0.1pct",
                              {"temperature": temperature, "policy_mode": "drop",
                               "policy_band": Band.hardest(0.001),
                               "policy_replacement": "replace_with_older"}))
    table1 = tuple(_table1_conditions(0.07) + _table1_conditions(0.2))
    analysis_only = (("baseline", {}),)
    return {
        "band_sufficiency": ExperimentPreset(
            "band_sufficiency",
            "probe accuracy when training on kept difficulty bands only",
            sufficiency),
        "band_necessity": ExperimentPreset(
            "band_necessity",
            "probe accuracy when training with difficulty bands removed",
            necessity),
        "hardest_removal_temps": ExperimentPreset(
            "hardest_removal_temps",
            "removing the hardest 0.1% (with replacement) across temperatures",
            tuple(hardest_temps)),
        "same_class_ablation": ExperimentPreset(
            "same_class_ablation",
            "same/different-class removal ablation at two temperatures",
            table1, base=(("queue_reserve", 256),)),
        "semantic_bands": ExperimentPreset(
            "semantic_bands",
            "same-class fraction, LCA depth, and dot curve across bands",
            analysis_only, base=(("analyses", ("bands", "band_sweep", "curve")),)),
        "consistency": ExperimentPreset(
            "consistency",
            "hard-frequency histogram against a shuffled baseline",
            analysis_only, base=(("analyses", ("consistency",)),)),
        "class_pairs": ExperimentPreset(
            "class_pairs",
            "class-pair mean dot-product league tables",
            analysis_only, base=(("analyses", ("class_pairs",)),)),
    }


PRESETS = build_presets()


def _write_manifest(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "path", "seed", "status"])
        writer.writerows(rows)


def _summarize(path, per_condition):
    rows = []
    for condition in per_condition:
        values = per_condition[condition]
        for metric in ("top1", "top5"):
            vals = [v[metric] for v in values if metric in v]
            if vals:
                rows.append((condition, metric, float(np.mean(vals)),
                             float(np.std(vals)), len(vals)))
    ana.write_csv(path, ["condition", "metric", "mean", "std", "n_seeds"], rows)
    return rows


def _directional_flags(preset_name, summary_rows):
    """Expected-directional checks whose deviation must be reported."""
    flags = []
    if preset_name == "same_class_ablation":
        means = {(cond, metric): mean
                 for cond, metric, mean, _, _ in summary_rows}
        base = means.get(("t0.07_baseline", "top1"))
        drop_same = means.get(("t0.07_drop_same_class", "top1"))
        if base is not None and drop_same is not None and drop_same < base:
            flags.append(
                "EXPECTED-DIRECTIONAL deviation: drop_same_class top1 mean "
                f"{drop_same:.4f} fell below baseline {base:.4f} at temperature 0.07")
    return flags


def run_preset(preset_name: str, out_dir, seeds, base_cfg=None, overrides=()):
    """Run every condition of a preset across ``seeds``; returns summary rows."""
    if preset_name not in PRESETS:
        raise ConfigError(f"unknown preset {preset_name!r}; "
                          f"choose from {sorted(PRESETS)}")
    preset = PRESETS[preset_name]
    cfg0 = dict(base_cfg) if base_cfg is not None else default_config()
    for key, value in preset.base:
        cfg0[key] = value
    cfg0 = apply_overrides(cfg0, overrides)
    os.makedirs(out_dir, exist_ok=True)
    manifest_rows = []
    per_condition = {}
    for condition, cond_overrides in preset.conditions:
        per_condition[condition] = []
        for seed in seeds:
            cfg = dict(cfg0)
            cfg.update(cond_overrides)
            cfg["seed"] = int(seed)
            run_dir = os.path.join(out_dir, condition, f"seed_{seed}")
            metrics = run_single(cfg, run_dir)
            per_condition[condition].append(metrics)
            manifest_rows.append((condition, os.path.relpath(run_dir, out_dir),
                                  seed, "ok"))
            _write_manifest(os.path.join(out_dir, "manifest.csv"), manifest_rows)
    summary_rows = _summarize(os.path.join(out_dir, "summary.csv"), per_condition)
    flags = _directional_flags(preset_name, summary_rows)
    if flags:
        with open(os.path.join(out_dir, "flags.txt"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(flags) + "\n")
    return summary_rows, flags


def parse_grid(spec: str) -> list:
    """Parse "key=v1|v2;key2=w1|w2" into an ordered list of (key, values).

    Values go through the key's config parser; duplicates within one axis
    are dropped.
    """
    axes = []
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"grid axis must look like key=v1|v2, got {part!r}")
        key, values_text = (piece.strip() for piece in part.split("=", 1))
        values = []
        for value_text in values_text.split("|"):
            value = parse_value(key, value_text.strip())
            if value not in values:
                values.append(value)
        if not values:
            raise ConfigError(f"grid axis {key!r} has no values")
        axes.append((key, values))
    return axes


def _slug(value) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", str(value))


def sweep(base_cfg, grid_spec: str, out_dir, seeds, max_points: int = MAX_GRID_POINTS):
    """One run per grid point (cartesian product) per seed, each in its own
    subdirectory, indexed by a manifest."""
    axes = parse_grid(grid_spec)
    keys = [k for k, _ in axes]
    points = list(itertools.product(*[values for _, values in axes])) if axes else [()]
    if len(points) > max_points:
        raise GridTooLargeError(f"grid has {len(points)} points, limit {max_points}")
    os.makedirs(out_dir, exist_ok=True)
    manifest_rows = []
    for i, point in enumerate(points):
        overrides = dict(zip(keys, point))
        label = "__".join(f"{k}_{_slug(v)}" for k, v in overrides.items()) or "base"
        for seed in seeds:
            cfg = dict(base_cfg)
            cfg.update(overrides)
            cfg["seed"] = int(seed)
            run_dir = os.path.join(out_dir, f"point_{i:03d}_{label}", f"seed_{seed}")
            run_single(cfg, run_dir)
            manifest_rows.append((label, os.path.relpath(run_dir, out_dir),
                                  seed, "ok"))
            _write_manifest(os.path.join(out_dir, "manifest.csv"), manifest_rows)
    return manifest_rows
