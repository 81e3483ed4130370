"""Batched evaluators mapping candidate (building, schedule) pairs to hourly T and total Q.

Calibration and schedule optimisation only need indoor temperature and
total consumption in physical units. Both the trained metamodel and the
reference oracle are wrapped behind the same ``predict`` call so either can
drive the search (the oracle case gives a noise-free self-consistency check).
"""
from __future__ import annotations

from typing import Protocol, Sequence

import numpy as np

from .domain import (
    CONSUMPTION_CHANNELS,
    OUTPUT_CHANNELS,
    TEMPERATURE_CHANNEL,
    USAGE_FIELDS,
    WEATHER_CHANNELS,
    BuildingParams,
    OccupancySchedule,
    UsageSchedule,
    WeatherSeries,
    calendar,
    consumption_total,
    occupancy_indicator,
)
from .errors import DomainError, OracleError
from .nn import MetamodelWeights, forward
from .refsim import OracleConfig, simulate_batch


class Predictor(Protocol):
    def predict(self, params: Sequence[BuildingParams], usages: Sequence[UsageSchedule],
                occ: OccupancySchedule, weather: WeatherSeries, *, anchor: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(t_int, q_total)``, each of shape (n_candidates, horizon)."""
        ...


def _broadcast(params, usages):
    params, usages = list(params), list(usages)
    if len(usages) == 1 and len(params) > 1:
        usages = usages * len(params)
    if len(params) == 1 and len(usages) > 1:
        params = params * len(usages)
    if len(params) != len(usages) or not params:
        raise DomainError("need matching, non-empty candidate lists")
    return params, usages


class MetamodelPredictor:
    """Frozen-weight metamodel; features are assembled in one vectorised pass per call."""

    def __init__(self, weights: MetamodelWeights, batch_size: int = 64):
        if weights.normalizer is None:
            raise DomainError("metamodel weights carry no normalizer")
        self.weights = weights
        self.norm = weights.normalizer
        self.layout = weights.feature_layout
        self.channels = weights.layout.output_channels
        self.batch_size = batch_size
        if TEMPERATURE_CHANNEL not in self.channels:
            raise DomainError("metamodel has no temperature output")

    def features(self, params, usages, occ, weather, *, anchor=0) -> np.ndarray:
        params, usages = _broadcast(params, usages)
        lay, norm = self.layout, self.norm
        horizon = len(weather)
        weekday, _ = calendar(horizon, anchor)
        x = np.empty((len(params), horizon, lay.width))
        theta = np.array([[p.theta_dict()[n] for n in lay.theta_fields] for p in params])
        x[:, :, lay.theta] = norm.normalize_columns(theta, lay.theta_fields)[:, None, :]
        wcols = [WEATHER_CHANNELS.index(c) for c in lay.weather_channels]
        x[:, :, lay.weather] = norm.normalize_columns(weather.data[:, wcols], lay.weather_channels)[None]
        x[:, :, lay.occupancy] = occupancy_indicator(occ, horizon, anchor)[None]
        ucols = [USAGE_FIELDS.index(f) for f in lay.usage_fields]
        rows = np.stack([norm.normalize_columns(u.values[:, ucols], lay.usage_fields) for u in usages])
        x[:, :, lay.usage] = rows[:, weekday, :]
        return x

    def predict_scaled(self, x: np.ndarray) -> np.ndarray:
        out = [forward(self.weights, x[lo : lo + self.batch_size]) for lo in range(0, len(x), self.batch_size)]
        y = np.concatenate(out, axis=0)
        if not np.all(np.isfinite(y)):
            raise DomainError("metamodel produced non-finite output")
        return y

    def physical(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ch = list(self.channels)
        t = self.norm.denormalize(y[..., ch.index(TEMPERATURE_CHANNEL)], TEMPERATURE_CHANNEL)
        if "Q_TOTAL" in ch:
            q = self.norm.denormalize(y[..., ch.index("Q_TOTAL")], "Q_TOTAL")
        else:
            q = sum(self.norm.denormalize(y[..., ch.index(c)], c) for c in CONSUMPTION_CHANNELS)
        return np.asarray(t, dtype=float), np.asarray(q, dtype=float)

    def predict(self, params, usages, occ, weather, *, anchor=0):
        return self.physical(self.predict_scaled(self.features(params, usages, occ, weather, anchor=anchor)))


class OraclePredictor:
    """The reference simulator behind the predictor interface."""

    def __init__(self, cfg: OracleConfig = OracleConfig()):
        self.cfg = cfg

    def predict(self, params, usages, occ, weather, *, anchor=0):
        params, usages = _broadcast(params, usages)
        out = simulate_batch(params, usages, [occ] * len(params), [weather] * len(params), self.cfg, anchor=anchor)
        if not np.all(np.isfinite(out)):
            raise OracleError("oracle produced non-finite output")
        return out[..., OUTPUT_CHANNELS.index(TEMPERATURE_CHANNEL)], consumption_total(out)
