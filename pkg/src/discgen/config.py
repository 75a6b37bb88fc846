"""Flat typed key-value run configuration with sections (INI syntax).

Unknown sections or keys are rejected. Command-line flags override config
values, and the fully resolved merge is persisted next to every run's
outputs so matched-seed ablations stay auditable.
"""

from __future__ import annotations

import configparser
from pathlib import Path
from typing import Any

SCHEMA: dict[str, dict[str, tuple[type, Any]]] = {
    "run": {
        "seed": (int, 0),
        "out": (str, ""),
    },
    "dataset": {
        "source": (str, "shapes"),  # shapes | binary
        "canvas": (int, 32),
        "channels": (int, 1),
        "train_count": (int, 2000),
        "valid_count": (int, 400),
        "test_count": (int, 400),
        "data_seed": (int, 0),
        "min_size": (int, 8),
        "max_size": (int, 13),
        "path": (str, ""),
        "height": (int, 32),
        "width": (int, 32),
        "label_bytes": (int, 1),
        "num_classes": (int, 0),  # 0 = infer from labels
    },
    "arch": {
        "latent": (int, 32),
        "base_filters": (int, 16),
        "stages": (int, 3),
        "dense_units": (int, 128),
        "feature_layers": (str, "1,2,3,4"),
        "include_logit_loss": (bool, False),
    },
    "train": {
        "lambdas": (str, "default"),  # "default" | comma-separated floats
        "learning_rate": (float, 1e-3),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "adam_eps": (float, 1e-8),
        "batch_size": (int, 50),
        "epochs": (int, 30),
        "mc_samples": (int, 1),
        "stop_encoder_grad": (bool, False),
        "fix_pixel_variance": (bool, False),
    },
    "eval": {
        "k": (int, 100),
        "splits": (str, "train,valid,test"),
        "sample_count": (int, 64),
        "recon_count": (int, 16),
        "interp_pairs": (int, 4),
        "interp_steps": (int, 8),
    },
    "blur": {
        "sigma": (float, 1.0),
        "batch": (int, 100),
        "depth": (int, 2),
        "steps": (int, 400),
        "learning_rate": (float, 2e-3),
        "seeds": (str, "0"),
    },
}


class ConfigError(ValueError):
    pass


def default_config() -> dict[str, dict[str, Any]]:
    return {section: {key: default for key, (_, default) in keys.items()}
            for section, keys in SCHEMA.items()}


def _coerce(section: str, key: str, raw: str) -> Any:
    kind, _ = SCHEMA[section][key]
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}") from exc


def load_config(path: str | Path) -> dict[str, dict[str, Any]]:
    parser = configparser.ConfigParser(interpolation=None)
    text = Path(path).read_text()
    parser.read_string(text)
    cfg = default_config()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key [{section}] {key}")
            cfg[section][key] = _coerce(section, key, raw)
    return cfg


def apply_overrides(cfg: dict[str, dict[str, Any]], args) -> None:
    """Merge command-line flags over config values (flags win)."""
    if getattr(args, "seed", None) is not None:
        cfg["run"]["seed"] = args.seed
    if getattr(args, "out", None):
        cfg["run"]["out"] = args.out
    if getattr(args, "lam", None):
        cfg["train"]["lambdas"] = args.lam
    if getattr(args, "stop_encoder_grad", False):
        cfg["train"]["stop_encoder_grad"] = True
    if getattr(args, "k", None) is not None:
        cfg["eval"]["k"] = args.k
    if getattr(args, "sigma", None) is not None:
        cfg["blur"]["sigma"] = args.sigma


def resolved_text(cfg: dict[str, dict[str, Any]], meta: dict[str, str]) -> str:
    """Deterministic serialization of the resolved config, schema order."""
    lines = [f"# {key} = {value}" for key, value in meta.items()]
    for section in SCHEMA:
        lines.append(f"[{section}]")
        for key in SCHEMA[section]:
            value = cfg[section][key]
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def parse_lambdas(raw: str) -> tuple[float, ...] | None:
    if raw.strip() == "default":
        return None
    try:
        values = tuple(float(v) for v in raw.split(",") if v.strip() != "")
    except ValueError as exc:
        raise ConfigError(f"cannot parse lambda list {raw!r}") from exc
    if not values:
        raise ConfigError("lambda list is empty")
    return values


def parse_int_list(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in raw.split(",") if v.strip() != "")
    except ValueError as exc:
        raise ConfigError(f"cannot parse integer list {raw!r}") from exc
