"""Run configuration: one JSON file, one dataclass per section, unknown keys rejected."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError

SCHEMA_VERSION = 1


def _from_dict(cls, data: Any, where: str):
    """Build dataclass ``cls`` from a mapping, recursing into dataclass-typed fields."""
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(known)}")
    kwargs = {}
    for name, value in data.items():
        tp = hints[name]
        sub = _dataclass_type(tp)
        if sub is not None and value is not None:
            value = _from_dict(sub, value, f"{where}.{name}")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _dataclass_type(tp):
    if dataclasses.is_dataclass(tp):
        return tp
    if isinstance(tp, types.UnionType) or typing.get_origin(tp) is typing.Union:
        for arg in typing.get_args(tp):
            if dataclasses.is_dataclass(arg):
                return arg
    return None


def _check(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


@dataclass(frozen=True)
class WeatherConfig:
    csv: str | None = None
    synthetic_days: int = 92
    synthetic_seed: int = 0

    def __post_init__(self):
        _check(self.csv is not None or self.synthetic_days >= 14, "weather: need a csv path or >= 14 synthetic days")


@dataclass(frozen=True)
class SiteConfig:
    """The building being calibrated/optimised, with its current (baseline) operation."""

    building: str = "stanley"
    theta_star: dict | None = None  # hidden truth for synthetic observations; drawn when absent
    usage: dict = field(default_factory=lambda: {
        "start_cool": 8, "end_cool": 19, "t_cool_reduced": 28, "t_cool_comfort": 23,
        "start_heat": 7, "end_heat": 18, "t_heat_reduced": 18, "t_heat_comfort": 22,
        "start_vent": 8, "end_vent": 19, "t_vent": 20, "vol_vent": 1.0,
    })
    occupancy: tuple = (8, 18)


@dataclass(frozen=True)
class SampleConfig:
    n_examples: int = 2000
    horizon: int = 336
    split_fraction: float = 0.2

    def __post_init__(self):
        _check(self.n_examples >= 1, "sample.n_examples must be >= 1")
        _check(self.horizon >= 24 and self.horizon % 24 == 0, "sample.horizon must be whole days")
        _check(0.0 <= self.split_fraction <= 1.0, "sample.split_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "lstm"
    d_emb: int = 32
    n_layers: int = 2
    outputs: str = "full"

    def __post_init__(self):
        _check(self.kind in ("lstm", "ffn"), "model.kind must be 'lstm' or 'ffn'")
        _check(self.outputs in ("full", "reduced"), "model.outputs must be 'full' or 'reduced'")
        _check(self.d_emb >= 1 and self.n_layers >= 1, "model.d_emb and model.n_layers must be >= 1")


@dataclass(frozen=True)
class TrainSection:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    beta: float = 0.5
    dropout: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float | None = 1.0


@dataclass(frozen=True)
class EvalSection:
    predictor: str = "metamodel"
    split: str = "validation"

    def __post_init__(self):
        _check(self.predictor in ("metamodel", "oracle"), "eval.predictor must be 'metamodel' or 'oracle'")
        _check(self.split in ("train", "validation", "all"), "eval.split must be train, validation or all")


@dataclass(frozen=True)
class CalibrateSection:
    predictor: str = "metamodel"
    max_iter: int = 300
    max_seconds: float | None = None
    cost_ceiling: float | None = None
    popsize: int | None = None
    sigma0: float = 0.3
    restart: bool = False
    start_hour: int = 0
    calib_hours: int = 336
    valid_hours: int = 336

    def __post_init__(self):
        _check(self.predictor in ("metamodel", "oracle"), "calibrate.predictor must be 'metamodel' or 'oracle'")
        _check(self.max_iter >= 1, "calibrate.max_iter must be >= 1")


@dataclass(frozen=True)
class OptimizeSection:
    population: int = 64
    generations: int = 200
    eta_crossover: float = 15.0
    eta_mutation: float = 20.0
    t_ref: float = 22.5
    relax: tuple = (0.0, 0.5)
    start_hour: int = 336
    hours: int = 336
    monthly_consumption_mwh: float | None = None
    predictor: str = "metamodel"

    def __post_init__(self):
        _check(self.population >= 4 and self.population % 2 == 0, "optimize.population must be even and >= 4")
        _check(self.predictor in ("metamodel", "oracle"), "optimize.predictor must be 'metamodel' or 'oracle'")


@dataclass(frozen=True)
class SimulateSection:
    source: str = "theta_star"
    start_hour: int = 0
    hours: int = 336

    def __post_init__(self):
        _check(self.source in ("theta_star", "theta_hat"), "simulate.source must be 'theta_star' or 'theta_hat'")


@dataclass(frozen=True)
class PathsConfig:
    dataset: str | None = None
    weights: str | None = None
    theta_hat: str | None = None


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    oracle: dict = field(default_factory=dict)
    ranges: dict | None = None
    weather: WeatherConfig = WeatherConfig()
    site: SiteConfig = SiteConfig()
    sample: SampleConfig = SampleConfig()
    model: ModelConfig = ModelConfig()
    train: TrainSection = TrainSection()
    eval: EvalSection = EvalSection()
    calibrate: CalibrateSection = CalibrateSection()
    optimize: OptimizeSection = OptimizeSection()
    simulate: SimulateSection = SimulateSection()
    paths: PathsConfig = PathsConfig()
    base_dir: str = "."

    def __post_init__(self):
        _check(self.schema_version == SCHEMA_VERSION, f"unsupported config schema_version {self.schema_version}")

    def resolve(self, rel: str | None) -> Path | None:
        if rel is None:
            return None
        p = Path(rel)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @classmethod
    def from_dict(cls, data: Mapping, base_dir: str | Path = ".") -> "RunConfig":
        if "base_dir" in data:
            raise ConfigError("base_dir is derived from the config location and cannot be set")
        cfg = _from_dict(cls, data, "config")
        return dataclasses.replace(cfg, base_dir=str(base_dir))

    @classmethod
    def load(cls, path: str | Path) -> tuple["RunConfig", str]:
        """Parse a config file; returns the config and the sha256 of its bytes."""
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} not found")
        raw = p.read_bytes()
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
        return cls.from_dict(data, p.resolve().parent), hashlib.sha256(raw).hexdigest()
