"""Experiment configuration: schema, validation and the key-value file format.

A config file is plain text, one ``key = value`` per line, ``#`` starts a
comment. Keys are the :class:`ExperimentConfig` field names; planner keys
carry a ``cem.`` prefix (``cem.horizon = 15``). Unknown keys are errors.

Value syntax: booleans ``true``/``false``, integers, floats, ``auto`` for
the optional sizes. ``tau = inf`` (or ``tau = 0``) selects plain PE.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .rng import MAX_SEED

MODEL_TYPES = ("physics", "mlp")


class ConfigError(ValueError):
    """Raised with every violated constraint, not just the first."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ExperimentConfig:
    # defaults follow the cart-pole hyperparameter table where it gives one
    tau: float = 1.0  # inf -> plain PE, contrastive term dropped
    rho: float = 0.5
    ensemble_size: int = 9
    self_regularization: bool = True
    model_update_frequency: int = 100
    model_learning_rate: float = 1e-3
    model_batch_size: int = 32
    bootstrap_samples: Optional[int] = None  # None -> current buffer size
    discount: float = 0.99  # unused by the finite-horizon planner
    max_training_steps: int = 500
    episode_length: int = 100
    l2_coefficient: float = 0.0
    seed: int = 0
    model_type: str = "physics"
    buffer_capacity: Optional[int] = None  # None -> max_training_steps
    resample_negatives: bool = True  # fresh negatives per minibatch
    update_epochs: int = 1  # passes over each sub-dataset per update event

    @property
    def plain_pe(self):
        return math.isinf(self.tau)

    @property
    def capacity(self):
        return self.buffer_capacity if self.buffer_capacity is not None else self.max_training_steps

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class CemConfig:
    horizon: int = 15
    population: int = 500
    elite_count: int = 50  # ceil(0.1 * population)
    iterations: int = 5
    particles: int = 20
    replan_frequency: int = 1
    init_std: float = 1.0
    warm_start: bool = True
    variance_floor: float = 1e-4

    @classmethod
    def from_ratio(cls, elite_ratio=0.1, **kw):
        pop = kw.get("population", cls.population)
        return cls(elite_count=max(1, math.ceil(elite_ratio * pop)), **kw)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _positive_int(errors, name, v):
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        errors.append(f"{name} must be a positive integer")


def _positive_real(errors, name, v):
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0 or math.isnan(v):
        errors.append(f"{name} must be > 0")


def validate_config(cfg: ExperimentConfig, cem: Optional[CemConfig] = None):
    """Return ``cfg`` (and ``cem``) if valid, else raise ConfigError listing all violations."""
    errors = []
    if not isinstance(cfg.tau, (int, float)) or math.isnan(cfg.tau) or not cfg.tau > 0:
        errors.append("tau must be > 0")
    if not isinstance(cfg.rho, (int, float)) or not 0.0 <= cfg.rho <= 1.0:
        errors.append("rho must lie in [0,1]")
    if isinstance(cfg.ensemble_size, bool) or not isinstance(cfg.ensemble_size, int) or cfg.ensemble_size < 1:
        errors.append("ensemble_size must be >= 1")
    if not isinstance(cfg.self_regularization, bool):
        errors.append("self_regularization must be true or false")
    for name in ("model_update_frequency", "model_batch_size", "max_training_steps", "episode_length",
                 "update_epochs"):
        _positive_int(errors, name, getattr(cfg, name))
    for name in ("bootstrap_samples", "buffer_capacity"):
        if getattr(cfg, name) is not None:
            _positive_int(errors, name, getattr(cfg, name))
    _positive_real(errors, "model_learning_rate", cfg.model_learning_rate)
    if not isinstance(cfg.discount, (int, float)) or not 0.0 <= cfg.discount <= 1.0:
        errors.append("discount must lie in [0,1]")
    if not isinstance(cfg.l2_coefficient, (int, float)) or not cfg.l2_coefficient >= 0 or math.isinf(cfg.l2_coefficient):
        errors.append("l2_coefficient must be >= 0")
    if isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int) or not 0 <= cfg.seed <= MAX_SEED:
        errors.append("seed must be a 64-bit unsigned integer")
    if cfg.model_type not in MODEL_TYPES:
        errors.append(f"model_type must be one of {', '.join(MODEL_TYPES)}")
    if not isinstance(cfg.resample_negatives, bool):
        errors.append("resample_negatives must be true or false")
    if cem is not None:
        for name in ("horizon", "population", "elite_count", "iterations", "particles", "replan_frequency"):
            _positive_int(errors, "cem." + name, getattr(cem, name))
        _positive_real(errors, "cem.init_std", cem.init_std)
        _positive_real(errors, "cem.variance_floor", cem.variance_floor)
        if isinstance(cem.elite_count, int) and isinstance(cem.population, int) and cem.elite_count > cem.population:
            errors.append("cem.elite_count must be <= cem.population")
    if errors:
        raise ConfigError(errors)
    return cfg if cem is None else (cfg, cem)


def _field_types(cls):
    hints = {}
    for f in fields(cls):
        t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
        hints[f.name] = t
    return hints


def _parse_value(type_name, text):
    text = text.strip()
    optional = type_name.startswith("Optional[")
    base = type_name[len("Optional["):-1] if optional else type_name
    if optional and text.lower() == "auto":
        return None
    if base == "bool":
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected true/false, got {text!r}")
    if base == "int":
        return int(text)
    if base == "float":
        return float(text)
    if base == "str":
        return text
    raise ValueError(f"unsupported field type {type_name}")  # pragma: no cover


def _format_value(v):
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_EXP_TYPES = _field_types(ExperimentConfig)
_CEM_TYPES = _field_types(CemConfig)


def _assignments(pairs):
    exp, cem, errors = {}, {}, []
    for key, raw in pairs:
        key = key.strip()
        if key.startswith("cem."):
            name, table, target = key[4:], _CEM_TYPES, cem
        else:
            name, table, target = key, _EXP_TYPES, exp
        if name not in table:
            errors.append(f"unknown key {key!r}")
            continue
        try:
            target[name] = _parse_value(table[name], raw)
            if key == "tau" and target[name] == 0:
                target[name] = math.inf  # 0 is the documented spelling of "no contrastive term"
        except ValueError as e:
            errors.append(f"{key}: {e}")
    return exp, cem, errors


def parse_assignments(pairs):
    """Turn ``[(key, value_text), ...]`` into (exp_changes, cem_changes); collects errors."""
    exp, cem, errors = _assignments(pairs)
    if errors:
        raise ConfigError(errors)
    return exp, cem


def parse_config(text):
    pairs = []
    errors = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, value = line.split("=", 1)
        pairs.append((key, value))
    exp, cem, more = _assignments(pairs)
    errors += more
    cfg, cem = ExperimentConfig(**exp), CemConfig(**cem)
    if errors:
        # report bad values alongside the syntax errors, not one batch at a time
        try:
            validate_config(cfg, cem)
        except ConfigError as e:
            errors += e.errors
        raise ConfigError(errors)
    return cfg, cem


def dump_config(cfg: ExperimentConfig, cem: CemConfig):
    lines = ["# experiment"]
    for f in fields(ExperimentConfig):
        lines.append(f"{f.name} = {_format_value(getattr(cfg, f.name))}")
    lines.append("# planner")
    for f in fields(CemConfig):
        lines.append(f"cem.{f.name} = {_format_value(getattr(cem, f.name))}")
    return "\n".join(lines) + "\n"


def load_config(path, overrides=(), seed=None):
    """Read, override and validate a config file. ``overrides`` are ``key=value`` strings."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError([f"cannot read config file {path}: {e.strerror or e}"]) from None
    cfg, cem = parse_config(text)
    return apply_overrides(cfg, cem, overrides, seed)


def apply_overrides(cfg, cem, overrides=(), seed=None):
    pairs = []
    for item in overrides:
        if "=" not in item:
            raise ConfigError([f"override {item!r} is not key=value"])
        pairs.append(tuple(item.split("=", 1)))
    exp_changes, cem_changes = parse_assignments(pairs)
    if seed is not None:
        exp_changes["seed"] = int(seed)
    cfg = dataclasses.replace(cfg, **exp_changes)
    cem = dataclasses.replace(cem, **cem_changes)
    return validate_config(cfg, cem)


DEFAULT_CONFIG = ExperimentConfig()
DEFAULT_CEM = CemConfig()
