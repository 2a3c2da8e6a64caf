"""Run configuration: JSON schema with strict key checking, defaults, dotted
overrides, and the content hash embedded in every produced artifact.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import GeneratorConfig
from .synthdata import DataConfig
from .training import TrainConfig

CACHE_ENV = "GEOMREP_CACHE"

_TRAIN_DEFAULTS = {
    "batch_size": 32,
    "steps": 2000,
    "learning_rate": 1e-3,
    "lr_decay_factor": 0.1,
    "lr_decay_at_fraction": 2.0 / 3.0,
    "optimizer": "adam",
    "adam_betas": [0.9, 0.999],
    "checkpoint_every": 0,
    "weights": {"w_recon_fwd": 1.0, "w_recon_bwd": 1.0, "w_consistency": 1.0},
    "consistency_warmup_steps": 0,
    "consistency_lr": 0.0,
    "label_budget": 0,
    "finetune_encoder": False,
    "deterministic": True,
    "preload": True,
    "early_stop_recon": None,
    "early_stop_iou": None,
    "early_stop_check_every": 250,
    "early_stop_min_steps": 0,
}

DEFAULTS = {
    "data": {
        "dir": "dataset",
        "num_pairs": 20000,
        "num_virtual_pairs": 0,
        "num_subjects": 5,
        "subject_scale_range": [0.9, 1.1],
        "train_subjects": [0, 1, 2],
        "test_subjects": [3, 4],
        "p3_test_view": 3,
        "num_views": 4,
        "rig": {
            "radius_mm": 5000.0,
            "elevation_deg": 12.0,
            "focal": [500.0, 500.0],
            "principal_point": [128.0, 128.0],
            "image_size": [256.0, 256.0],
        },
        "torus": {
            "radius_mm": 5000.0,
            "azimuth_range": [0.0, 2.0 * np.pi],
            "elevation_range_deg": [-15.0, 15.0],
        },
        "aug_from_views": None,
        "look_at": [0.0, 0.0, 900.0],
        "map_size": [64, 64],
        "line_width_px": 8.0,
        "families": ["upright", "active", "dynamic"],
        "root_height_range_mm": [820.0, 980.0],
        "root_xy_jitter_mm": 100.0,
    },
    "model": {
        "map_channels": 15,
        "map_size": 64,
        "base_channels": 32,
        "latent_points": 128,
    },
    "train": {
        "repr": dict(_TRAIN_DEFAULTS),
        "pose": {**_TRAIN_DEFAULTS, "steps": 3000, "label_budget": 500},
        "baseline": {**_TRAIN_DEFAULTS, "steps": 3000, "label_budget": 500},
    },
    "eval": {
        "protocol": "P1",
        "max_samples": None,
        "interpolate": {"sample_a": 0, "sample_b": 1, "steps": 8},
    },
    "seeds": {"data": 0, "repr": 0, "pose": 0, "baseline": 0},
    "output_dir": "runs/default",
}

# Leaves whose None default accepts any JSON value of the noted kind.
_NULLABLE = {
    "data.aug_from_views": (list, type(None)),
    "eval.max_samples": (int, type(None)),
    "train.repr.early_stop_recon": (float, int, type(None)),
    "train.pose.early_stop_recon": (float, int, type(None)),
    "train.baseline.early_stop_recon": (float, int, type(None)),
    "train.repr.early_stop_iou": (float, int, type(None)),
    "train.pose.early_stop_iou": (float, int, type(None)),
    "train.baseline.early_stop_iou": (float, int, type(None)),
}


def _check_leaf(path: str, value, default):
    if path in _NULLABLE:
        if not isinstance(value, _NULLABLE[path]):
            raise ConfigError(path, f"expected {_NULLABLE[path]}, got {type(value).__name__}")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected bool, got {type(value).__name__}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected int, got {type(value).__name__}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected number, got {type(value).__name__}")
        value = float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected string, got {type(value).__name__}")
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(path, f"expected list, got {type(value).__name__}")
    elif default is None:
        pass
    return value


def merge_config(user: dict, defaults: dict = None, prefix: str = "") -> dict:
    """Defaults overlaid with user values; unknown keys are rejected with
    their dotted path."""
    defaults = DEFAULTS if defaults is None else defaults
    if not isinstance(user, dict):
        raise ConfigError(prefix or "<root>", f"expected object, got {type(user).__name__}")
    out = {}
    for key, default in defaults.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in user:
            out[key] = json.loads(json.dumps(default))  # deep copy
        elif isinstance(default, dict):
            out[key] = merge_config(user[key], default, path)
        else:
            out[key] = _check_leaf(path, user[key], default)
    for key in user:
        if key not in defaults:
            path = f"{prefix}.{key}" if prefix else key
            raise ConfigError(path, "unknown key")
    return out


def validate_semantics(cfg: dict):
    a0, a1 = cfg["data"]["torus"]["azimuth_range"]
    if not (0.0 <= a0 <= a1 < 2.0 * np.pi + 1e-12):
        raise ConfigError("data.torus.azimuth_range", f"need 0 <= lo <= hi < 2*pi, got {[a0, a1]}")
    e0, e1 = cfg["data"]["torus"]["elevation_range_deg"]
    if not (-90.0 < e0 <= e1 < 90.0):
        raise ConfigError("data.torus.elevation_range_deg", f"bad range {[e0, e1]}")
    if cfg["data"]["torus"]["radius_mm"] <= 0:
        raise ConfigError("data.torus.radius_mm", "must be > 0")
    if cfg["data"]["num_pairs"] <= 0:
        raise ConfigError("data.num_pairs", "must be > 0")
    if set(cfg["data"]["train_subjects"]) & set(cfg["data"]["test_subjects"]):
        raise ConfigError("data.train_subjects", "train/test subjects overlap")
    if cfg["eval"]["protocol"] not in ("P1", "P2", "P3"):
        raise ConfigError("eval.protocol", f"unknown protocol {cfg['eval']['protocol']!r}")
    for stage in ("repr", "pose", "baseline"):
        if cfg["train"][stage]["batch_size"] <= 0:
            raise ConfigError(f"train.{stage}.batch_size", "must be > 0")
        if cfg["train"][stage]["steps"] < 0:
            raise ConfigError(f"train.{stage}.steps", "must be >= 0")


def apply_overrides(cfg: dict, overrides) -> dict:
    """--set section.key=value (value parsed as JSON, falling back to str)."""
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(item, "override must look like section.key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = dotted.split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(dotted, "unknown key")
            node = node[part]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(dotted, "unknown key")
        node[parts[-1]] = value
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:16]


def load_config(path, overrides=None) -> tuple:
    """Read, override, merge, and validate; returns (config, hash)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(str(path), "config file does not exist")
    try:
        user = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(str(path), f"invalid JSON: {e}") from e
    user = apply_overrides(user, overrides)
    cfg = merge_config(user)
    validate_semantics(cfg)
    return cfg, config_hash(cfg)


def resolve_dataset_dir(cfg: dict) -> Path:
    """Relative dataset dirs land under $GEOMREP_CACHE when it is set."""
    d = Path(cfg["data"]["dir"])
    if not d.is_absolute():
        cache = os.environ.get(CACHE_ENV)
        if cache:
            d = Path(cache) / d
    return d


def data_config(cfg: dict) -> DataConfig:
    d = cfg["data"]
    return DataConfig(
        seed=cfg["seeds"]["data"],
        num_pairs=d["num_pairs"],
        num_virtual_pairs=d["num_virtual_pairs"],
        num_subjects=d["num_subjects"],
        subject_scale_range=tuple(d["subject_scale_range"]),
        train_subjects=tuple(d["train_subjects"]),
        test_subjects=tuple(d["test_subjects"]),
        p3_test_view=d["p3_test_view"],
        num_views=d["num_views"],
        rig_radius_mm=d["rig"]["radius_mm"],
        rig_elevation_deg=d["rig"]["elevation_deg"],
        look_at=tuple(d["look_at"]),
        focal=tuple(d["rig"]["focal"]),
        principal_point=tuple(d["rig"]["principal_point"]),
        image_size=tuple(d["rig"]["image_size"]),
        map_size=tuple(d["map_size"]),
        line_width_px=d["line_width_px"],
        torus_radius_mm=d["torus"]["radius_mm"],
        torus_azimuth_range=tuple(d["torus"]["azimuth_range"]),
        torus_elevation_range_deg=tuple(d["torus"]["elevation_range_deg"]),
        aug_from_views=None if d["aug_from_views"] is None else tuple(d["aug_from_views"]),
        families=tuple(d["families"]),
        root_height_range_mm=tuple(d["root_height_range_mm"]),
        root_xy_jitter_mm=d["root_xy_jitter_mm"],
    )


def generator_config(cfg: dict) -> GeneratorConfig:
    return GeneratorConfig(**cfg["model"])


def train_config(cfg: dict, stage: str) -> TrainConfig:
    t = dict(cfg["train"][stage])
    t["adam_betas"] = tuple(t["adam_betas"])
    return TrainConfig(seed=cfg["seeds"][stage], **t)
