"""Run configuration: flat key=value files with an `include` directive.

A config file is a list of `key = value` lines (# comments). One optional
`include = path` line (relative to the including file) loads another config
first; keys in the current file override the included ones. The flat format
diffs cleanly across experiments.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .ioutil import parse_kv_lines
from .losses import LossConfig
from .model import ModelConfig
from .scenes import DatasetConfig, SceneConfig


class ConfigError(ValueError):
    pass


def parse_config_file(path: str) -> dict:
    """Flat key/value mapping with `include` resolved recursively."""
    return _parse(os.path.abspath(path), visited=())


def _parse(path: str, visited: tuple) -> dict:
    if path in visited:
        chain = " -> ".join(visited + (path,))
        raise ConfigError(f"include cycle: {chain}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        flat = parse_kv_lines(text, source=path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    inc = flat.pop("include", None)
    if inc is None:
        return flat
    base = _parse(os.path.normpath(os.path.join(os.path.dirname(path), inc)),
                  visited + (path,))
    base.update(flat)
    return base


def _to_int(key, raw):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected integer, got {raw!r}") from None


def _to_float(key, raw):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected number, got {raw!r}") from None


def _to_bool(key, raw):
    low = str(raw).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected boolean, got {raw!r}")


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs: dataset shape, model, losses, optimizer."""

    dataset: str = "dataset"
    out_dir: str = "run"
    seed: int = 0
    steps: int = 400
    step_size: float = 3e-4
    momentum: float = 0.9
    decay: float = 0.0           # step size at step t: step_size / (1 + decay*t)
    batch_scenes: int = 1
    views_per_batch: int = 4
    view_dropout: float = 0.0    # per-step probability of training with V=1
    checkpoint_every: int = 200
    depth_weight: float = 0.1
    train_scenes: int = 0        # scenes [0, train_scenes) train; 0 = all
    occlusion_tau: float = 0.05
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    data: DatasetConfig = field(default_factory=DatasetConfig)

    def validate(self, need_dataset: bool = False) -> None:
        if not self.step_size > 0:
            raise ConfigError("step_size must be positive")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.decay < 0:
            raise ConfigError("decay must be nonnegative")
        if self.batch_scenes < 1 or self.views_per_batch < 1:
            raise ConfigError("batch_scenes and views_per_batch must be >= 1")
        if not 0.0 <= self.view_dropout <= 1.0:
            raise ConfigError("view_dropout must be in [0, 1]")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if self.depth_weight < 0:
            raise ConfigError("depth_weight must be nonnegative")
        if self.train_scenes < 0:
            raise ConfigError("train_scenes must be nonnegative")
        try:
            self.model.validate()
            self.loss.validate()
            self.data.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if need_dataset and not os.path.isdir(self.dataset):
            raise ConfigError(f"dataset directory not found: {self.dataset}")


# key -> (section, field, coercion); flat names keep configs greppable
_MODEL_KEYS = {
    "patch_size": _to_int, "embed_dim": _to_int, "block_pairs": _to_int,
    "heads": _to_int, "register_count": _to_int, "sg_lobes": _to_int,
    "aux_depth": _to_bool,
}
_LOSS_KEYS = {
    "eps": _to_float, "weight_alb": _to_float, "weight_diff": _to_float,
    "weight_spec": _to_float, "weight_recon": _to_float,
    "weight_illum": _to_float,
}
_DATA_KEYS = {
    "scenes": _to_int, "views": _to_int, "height": _to_int, "width": _to_int,
    "data_seed": _to_int, "overwrite": _to_bool, "arc_radius": _to_float,
    "arc_span": _to_float, "elevation": _to_float, "fov_degrees": _to_float,
}
_SCENE_KEYS = {
    "checker_prob": _to_float, "lobe_count": _to_int,
    "min_primitives": _to_int, "max_primitives": _to_int,
}
_RUN_KEYS = {
    "dataset": str, "out_dir": str, "seed": _to_int, "steps": _to_int,
    "step_size": _to_float, "momentum": _to_float, "decay": _to_float,
    "batch_scenes": _to_int, "views_per_batch": _to_int,
    "view_dropout": _to_float, "checkpoint_every": _to_int,
    "depth_weight": _to_float, "train_scenes": _to_int,
    "occlusion_tau": _to_float,
}


def build_run_config(flat: dict) -> RunConfig:
    """Typed RunConfig from a flat mapping; unknown keys are errors."""
    model_kw, loss_kw, data_kw, scene_kw, run_kw = {}, {}, {}, {}, {}
    for key, raw in flat.items():
        if key in _MODEL_KEYS:
            model_kw[key] = _MODEL_KEYS[key](key, raw)
        elif key in _LOSS_KEYS:
            loss_kw[key] = _LOSS_KEYS[key](key, raw)
        elif key in _DATA_KEYS:
            field_name = "seed" if key == "data_seed" else key
            data_kw[field_name] = _DATA_KEYS[key](key, raw)
        elif key in _SCENE_KEYS:
            scene_kw[key] = _SCENE_KEYS[key](key, raw)
        elif key in _RUN_KEYS:
            conv = _RUN_KEYS[key]
            run_kw[key] = conv(raw) if conv is str else conv(key, raw)
        else:
            raise ConfigError(f"unknown config key: {key}")
    if scene_kw:
        data_kw["scene"] = SceneConfig(**scene_kw)
    try:
        return RunConfig(model=ModelConfig(**model_kw),
                         loss=LossConfig(**loss_kw),
                         data=DatasetConfig(**data_kw),
                         **run_kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(path: str) -> RunConfig:
    return build_run_config(parse_config_file(path))
