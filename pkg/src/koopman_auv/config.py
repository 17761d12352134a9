"""Run configuration: one YAML document plus ``--set key=value`` overrides.

Format version 1. Top-level sections::

    version: 1
    seed: 0
    plant:      {m, x_vdot, x_vv, t_ded, rho, d, alpha1, alpha2, omega}
    dictionary: {n_rbf, center_low, center_high, width}
    collect:    {n_traj, steps, dt, input_low, input_high, v0_low, v0_high}
    fit:        {alpha}
    predict:    {v0: [..], amplitude, period, duration, dt}
    mpc:        {preset, plus any MpcConfig field as an override}
    track:      {reference: [[t, value], ...], duration, dt, v0}

Missing keys take the defaults below. ``--set`` keys are dotted paths
(``mpc.horizon=5``) and values are parsed as YAML scalars.
"""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .harness import DEFAULT_DURATION, DEFAULT_REFERENCE
from .plant import PlantParams

CONFIG_VERSION = 1

DEFAULTS = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "plant": PlantParams().to_dict(),
    "dictionary": {"n_rbf": 4, "center_low": -1.0, "center_high": 1.0, "width": 1.0},
    "collect": {"n_traj": 1000, "steps": 100, "dt": 0.01, "input_low": -50.0, "input_high": 50.0,
                "v0_low": -0.5, "v0_high": 0.5},
    "fit": {"alpha": 1e-6},
    "predict": {"v0": [0.0, -0.1], "amplitude": 40.0, "period": 0.1, "duration": 1.0, "dt": 0.01},
    "mpc": {"preset": "matlab"},
    "track": {"reference": [list(bp) for bp in DEFAULT_REFERENCE], "duration": DEFAULT_DURATION,
              "dt": 0.01, "v0": 0.0},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base and path.rstrip(".") not in ("mpc", "plant"):
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def parse_override(item: str) -> dict:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"empty key in --set {item!r}")
    value = yaml.safe_load(raw) if raw.strip() else None
    nested: dict = {}
    cursor = nested
    for p in parts[:-1]:
        cursor = cursor.setdefault(p, {})
    cursor[parts[-1]] = value
    return nested


def load_config(path=None, overrides=(), seed: int | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        doc = yaml.safe_load(path.read_text()) or {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        version = doc.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"{path}: unsupported config version {version!r}")
        cfg = _merge(cfg, doc)
    for item in overrides:
        cfg = _merge(cfg, parse_override(item))
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def plant_from_config(cfg: dict) -> PlantParams:
    try:
        return PlantParams.from_mapping({k: float(v) for k, v in cfg["plant"].items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"plant: {exc}") from None
