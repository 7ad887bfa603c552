"""Flat, strictly-typed key=value experiment configuration.

One ``key = value`` pair per line; ``#`` starts a comment. Unknown keys are
rejected, not ignored — a silent typo in a band fraction would invalidate an
experiment. The same keys are accepted as ``--set key=value`` CLI overrides.
"""

from __future__ import annotations

import math

from .contrastive import (Band, CLASS_RELATIONS, ContrastiveConfig, FilterPolicy,
                          MODES, REPLACEMENTS)
from .data import AugmentConfig
from .encoder import EncoderConfig
from .exceptions import ConfigError
from .trainer import TrainConfig


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text):
    t = text.strip()
    return tuple(int(v) for v in t.split(",")) if t else ()


def _parse_float_list(text):
    t = text.strip()
    return tuple(float(v) for v in t.split(",")) if t else ()


def _parse_str_list(text):
    t = text.strip()
    return tuple(v.strip() for v in t.split(",") if v.strip()) if t else ()


def _choice(options):
    def parse(text):
        t = text.strip().lower()
        if t not in options:
            raise ValueError(f"must be one of {options}, got {text!r}")
        return t
    return parse


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, Band):
        return value.to_string()
    return str(value)


ANALYSIS_NAMES = ("bands", "band_sweep", "curve", "consistency", "class_pairs")

# key -> (parser, default)
KEY_SPECS = {
    "seed": (int, 0),
    "epochs": (int, 60),
    "batch_size": (int, 64),
    "snapshot_every": (int, 0),
    "learning_rate": (float, 0.03),
    "sgd_momentum": (float, 0.9),
    "weight_decay": (float, 1e-4),
    "temperature": (float, 0.2),
    "queue_capacity": (int, 1024),
    "queue_reserve": (int, 64),
    "policy_mode": (_choice(MODES), "keep"),
    "policy_band": (Band.from_string, Band.all()),
    "policy_class": (_choice(CLASS_RELATIONS), "any"),
    "policy_replacement": (_choice(REPLACEMENTS), "omit"),
    "encoder_base_hidden_dims": (_parse_int_list, (256, 256)),
    "encoder_repr_dim": (int, 128),
    "encoder_head_hidden_dim": (int, 256),
    "encoder_embed_dim": (int, 64),
    "encoder_momentum": (float, 0.999),
    "augment_noise_sigma": (float, 0.3),
    "augment_scale_jitter": (float, 0.1),
    "augment_dropout_prob": (float, 0.1),
    "data_source": (_choice(("synthetic", "cifar10")), "synthetic"),
    "data_seed": (int, 12345),
    "data_tree_depth": (int, 4),
    "data_dims": (int, 64),
    "data_level_sigmas": (_parse_float_list, (1.0, 0.7, 0.5, 0.35)),
    "data_within_sigma": (float, 0.6),
    "data_instances_per_class": (int, 200),
    "data_eval_per_class": (int, 50),
    "data_cifar_train": (str, ""),
    "data_cifar_eval": (str, ""),
    "probe_epochs": (int, 100),
    "probe_learning_rate": (float, 0.1),
    "analysis_queries": (int, 1000),
    "analysis_negatives": (int, 1000),
    "analysis_seed": (int, 777),
    "analysis_use_momentum_encoder": (_parse_bool, False),
    "analysis_hard_fraction": (float, 0.05),
    "analysis_n_bins": (int, 50),
    "analysis_n_shuffles": (int, 10),
    "analysis_curve_points": (int, 20),
    "run_probe": (_parse_bool, True),
    "analyses": (_parse_str_list, ()),
}


def default_config() -> dict:
    return {key: default for key, (_, default) in KEY_SPECS.items()}


def parse_value(key: str, text: str):
    if key not in KEY_SPECS:
        raise ConfigError(f"unknown config key {key!r}")
    parser, _ = KEY_SPECS[key]
    try:
        value = parser(text)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from None
    if key == "analyses":
        for name in value:
            if name not in ANALYSIS_NAMES:
                raise ConfigError(
                    f"unknown analysis {name!r}; choose from {ANALYSIS_NAMES}")
    return value


def parse_config_text(text: str, base: dict = None) -> dict:
    """Parse config lines over ``base`` (defaults when omitted). Strict:
    unknown keys and malformed lines raise ConfigError naming the problem."""
    cfg = dict(base) if base is not None else default_config()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        cfg[key] = parse_value(key, value)
    return cfg


def load_config(path, base: dict = None) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base=base)


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``key=value`` strings (e.g. from repeated --set flags)."""
    cfg = dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        cfg[key] = parse_value(key, value)
    return cfg


def config_to_text(cfg: dict) -> str:
    """Render a full config snapshot in declared key order."""
    lines = [f"{key} = {_fmt(cfg[key])}" for key in KEY_SPECS if key in cfg]
    extra = sorted(set(cfg) - set(KEY_SPECS))
    if extra:
        raise ConfigError(f"unknown config keys {extra}")
    return "\n".join(lines) + "\n"


def save_config(path, cfg: dict):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))


def validate_config(cfg: dict):
    unknown = sorted(set(cfg) - set(KEY_SPECS))
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    if cfg["data_source"] == "synthetic":
        if len(cfg["data_level_sigmas"]) != cfg["data_tree_depth"]:
            raise ConfigError(
                "data_level_sigmas must list one sigma per tree level "
                f"({cfg['data_tree_depth']}), got {len(cfg['data_level_sigmas'])}")
    elif not cfg["data_cifar_train"]:
        raise ConfigError("data_source=cifar10 requires data_cifar_train")
    if not math.isfinite(cfg["temperature"]) or cfg["temperature"] <= 0:
        raise ConfigError(f"temperature must be positive, got {cfg['temperature']}")
    return cfg


def policy_from_config(cfg: dict) -> FilterPolicy:
    return FilterPolicy(mode=cfg["policy_mode"], band=cfg["policy_band"],
                        class_relation=cfg["policy_class"],
                        replacement=cfg["policy_replacement"])


def train_config_from_config(cfg: dict, input_dim: int) -> TrainConfig:
    encoder = EncoderConfig(input_dim=input_dim,
                            base_hidden_dims=cfg["encoder_base_hidden_dims"],
                            repr_dim=cfg["encoder_repr_dim"],
                            head_hidden_dim=cfg["encoder_head_hidden_dim"],
                            embed_dim=cfg["encoder_embed_dim"],
                            momentum_coeff=cfg["encoder_momentum"])
    contrastive = ContrastiveConfig(temperature=cfg["temperature"],
                                    queue_capacity=cfg["queue_capacity"],
                                    queue_reserve=cfg["queue_reserve"],
                                    policy=policy_from_config(cfg))
    augment_cfg = AugmentConfig(noise_sigma=cfg["augment_noise_sigma"],
                                scale_jitter=cfg["augment_scale_jitter"],
                                coordinate_dropout_prob=cfg["augment_dropout_prob"])
    return TrainConfig(encoder=encoder, contrastive=contrastive,
                       augment=augment_cfg, epochs=cfg["epochs"],
                       batch_size=cfg["batch_size"],
                       learning_rate=cfg["learning_rate"],
                       sgd_momentum=cfg["sgd_momentum"],
                       weight_decay=cfg["weight_decay"], seed=cfg["seed"],
                       snapshot_every=cfg["snapshot_every"])
