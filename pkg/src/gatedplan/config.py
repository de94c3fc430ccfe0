"""Experiment configuration and its YAML loader.

A config file is a YAML mapping whose top-level keys mirror the fields of
``ExperimentConfig``; nested sections mirror the component config
dataclasses. Any key that is not a field is rejected with its dotted path.
Lists are converted to tuples. The ``corruption`` section may also be a bare
preset name from ``CORRUPTION_PRESETS``.

Example::

    seed: 0
    trials: 30
    methods: [lowlevel_only, pure_idm, hierarchical]
    corruption: high
    executor: {tau: 0.5, persistence: 3, max_switches: 1}
    lowlevel: {similar_confusion_prob: 0.6}
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field

import yaml

from .executor import ExecutorConfig
from .idm import LossConfig, TrainConfig
from .lowlevel import LowLevelConfig
from .metrics import MetricsConfig
from .planner import CORRUPTION_PRESETS, CorruptionModel, PlannerConfig
from .play import PlayConfig
from .smoother import SmootherConfig
from .world import CONDITIONS, SETTINGS, WorldConfig

METHODS = ("lowlevel_only", "pure_idm", "hierarchical", "simultaneous")


# Optimizer settings used by experiments. The TrainConfig defaults (lr 5e-4,
# eps 0.01) converge too slowly on random play for sub-centimeter pose error.
EXPERIMENT_TRAIN = TrainConfig(base_lr=1e-3, adam_eps=1e-8)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    trials: int = 30
    methods: tuple[str, ...] = ("lowlevel_only", "pure_idm", "hierarchical")
    settings: tuple[str, ...] = SETTINGS
    conditions: tuple[str, ...] = CONDITIONS
    workers: int = 1
    checkpoint: str | None = None
    world: WorldConfig = field(default_factory=WorldConfig)
    play: PlayConfig = field(default_factory=PlayConfig)
    train: TrainConfig = field(default_factory=lambda: EXPERIMENT_TRAIN)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    corruption: CorruptionModel = field(default_factory=CorruptionModel)
    # the simulated table is at z = 0, so the height floor sits there too
    smoother: SmootherConfig = field(default_factory=lambda: SmootherConfig(clamp_min=0.0))
    executor: ExecutorConfig = field(default_factory=ExecutorConfig)
    lowlevel: LowLevelConfig = field(default_factory=LowLevelConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        for name, allowed, got in (("method", METHODS, self.methods),
                                   ("setting", SETTINGS, self.settings),
                                   ("condition", CONDITIONS, self.conditions)):
            bad = [g for g in got if g not in allowed]
            if bad or not got:
                raise ValueError(f"unknown or empty {name} list: {bad or got}")

    def needs_model(self) -> bool:
        return any(m != "lowlevel_only" for m in self.methods)


def _is_dataclass_type(tp) -> bool:
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def _strip_optional(tp):
    if typing.get_origin(tp) in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return tp


def _convert(tp, value, where: str, base=None):
    tp = _strip_optional(tp)
    if value is None:
        return None
    if _is_dataclass_type(tp):
        if tp is CorruptionModel and isinstance(value, str):
            if value not in CORRUPTION_PRESETS:
                raise ConfigError(f"{where}: unknown corruption preset {value!r}")
            return CorruptionModel.preset(value)
        return build(tp, value, where, base)
    if typing.get_origin(tp) is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(args[0], v, f"{where}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} entries, got {len(value)}")
        return tuple(_convert(a, v, f"{where}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            if isinstance(value, str) and value.strip().lower() in ("inf", "-inf", ".inf", "-.inf"):
                return float(value.replace(".", ""))
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def build(cls, data, where: str = "", base=None):
    """Construct dataclass ``cls`` from a mapping, recursively, rejecting unknown keys.

    Keys absent from ``data`` keep their value in ``base`` (default: ``cls()``),
    so a partial section overrides only what it names.
    """
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(f'{where}.{k}'.lstrip('.') for k in unknown)}")
    if base is None:
        base = cls()
    kwargs = {k: _convert(hints[k], v, f"{where}.{k}".lstrip("."), getattr(base, k))
              for k, v in data.items()}
    try:
        return dataclasses.replace(base, **kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where or 'config'}: {e}") from None


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: not valid YAML ({e})") from None
    return build(ExperimentConfig, data or {})


def to_dict(obj):
    """Plain nested dict (tuples become lists) suitable for YAML output."""
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [to_dict(v) for v in obj]
    return obj


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


__all__ = ["ConfigError", "ExperimentConfig", "LossConfig", "METHODS", "build", "dump_config",
           "load_config", "to_dict"]
