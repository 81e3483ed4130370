"""Single-zone lumped-capacitance building simulator used as ground truth.

The zone is one air-plus-structure node of capacity ``C`` (kWh/K) exchanging
heat with outdoor air through the envelope and infiltration, with supply air
from the AHU during ventilation hours, internal and solar gains, and
proportional heating/cooling toward the active setpoint. One explicit Euler
step per hour::

    T' = T + (Q_heat - Q_ac + Q_gains + Q_solar + UA (T_amb - T)
              + Q_infiltration + Q_vent) / C
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from . import kernels
from .domain import (
    CONSUMPTION_CHANNELS,
    OUTPUT_CHANNELS,
    USAGE_FIELDS,
    WEATHER_CHANNELS,
    BuildingParams,
    Episode,
    Geometry,
    OccupancySchedule,
    RangeSet,
    UsageSchedule,
    WeatherSeries,
    calendar,
    occupancy_indicator,
    usage_hourly,
)
from .errors import OracleError

_U = {name: i for i, name in enumerate(USAGE_FIELDS)}
_TAMB = WEATHER_CHANNELS.index("TAMB")
_IGLOB = WEATHER_CHANNELS.index("IGLOB_H")


@dataclass(frozen=True)
class OracleConfig:
    """Physical coefficients of the reference simulator."""

    wall_base_conductance: float = 3.0  # W/(m2 K), envelope without insulation
    insulation_conductivity: float = 0.035  # W/(m K), polystyrene class
    window_u: float = 2.8  # W/(m2 K)
    ground_u: float = 0.4  # W/(m2 K)
    occupant_gain: float = 80.0  # W per person
    pc_gain: float = 60.0  # W per PC
    lighting_density: float = 8.0  # W/m2 of floor
    air_heat_capacity: float = 1.2 * 1.005 / 3600.0  # kWh/(m3 K)
    solar_aperture: float = 0.1  # fraction of horizontal irradiance on window area
    thermostat_gain: float = 400.0  # kW/K
    storey_height: float = 3.0  # m, zone volume = floor area x height
    ahu_design_delta_t: float = 20.0  # K, sizes the AHU output bounds

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v > 0):
                raise OracleError(f"oracle coefficient {f.name} must be > 0, got {v}")

    def wall_u(self, thickness):
        """U-value (W/m2K) of an opaque element with ``thickness`` metres of insulation."""
        return 1.0 / (1.0 / self.wall_base_conductance + np.asarray(thickness) / self.insulation_conductivity)

    def volume(self, total_floor_area: float) -> float:
        return total_floor_area * self.storey_height


@dataclass(frozen=True)
class ZoneState:
    t_int: float
    hour_index: int = 0

    def __post_init__(self):
        if not math.isfinite(self.t_int):
            raise OracleError(f"zone temperature is not finite: {self.t_int}")
        if self.hour_index < 0:
            raise OracleError("hour_index must be >= 0")


@dataclass(frozen=True)
class HourInput:
    """Everything the zone sees during one hour, in physical units."""

    t_amb: float
    iglob_h: float
    occupied: float
    t_heat_set: float
    t_cool_set: float
    ventilating: bool
    t_vent: float
    vol_vent: float


@dataclass(frozen=True)
class ZonePlant:
    """Constants derived from a building and the oracle coefficients."""

    capacity: float  # kWh/K
    ua: float  # kW/K, envelope
    infiltration: float  # kW/K
    aperture: float  # kW per (W/m2) of horizontal irradiance
    p_heat: float
    p_cool: float
    people_kw: float
    eqp_kw: float
    light_kw: float
    eqp_night: float
    light_night: float
    volume: float

    @classmethod
    def from_params(cls, params: BuildingParams, cfg: OracleConfig) -> "ZonePlant":
        vol = cfg.volume(params.total_floor_area)
        facade = np.array(params.facade_area)
        win = np.array(params.facade_window_percent) / 100.0
        ua_w = (
            np.sum(facade * (1.0 - win) * cfg.wall_u(np.array(params.facade_thickness)))
            + np.sum(facade * win) * cfg.window_u
            + params.roof_area * cfg.wall_u(params.roof_thickness)
            + params.ground_area * cfg.ground_u
        )
        return cls(
            capacity=params.capacitance * vol / 3600.0,
            ua=float(ua_w) / 1000.0,
            infiltration=params.airchange_infiltration * vol * cfg.air_heat_capacity,
            aperture=cfg.solar_aperture * float(np.sum(facade * win)) / 1000.0,
            p_heat=params.power_heat_max,
            p_cool=params.power_cool_max,
            people_kw=params.n_occupants * cfg.occupant_gain / 1000.0,
            eqp_kw=params.n_pcs * cfg.pc_gain / 1000.0,
            light_kw=cfg.lighting_density * params.total_floor_area / 1000.0,
            eqp_night=params.percent_pcs_night / 100.0,
            light_night=params.percent_light_night / 100.0,
            volume=vol,
        )


def _plant_arrays(plants: Sequence[ZonePlant]) -> dict[str, np.ndarray]:
    names = ("capacity", "ua", "infiltration", "aperture", "p_heat", "p_cool",
             "people_kw", "eqp_kw", "light_kw", "eqp_night", "light_night")
    return {n: np.array([getattr(p, n) for p in plants], dtype=float) for n in names}


def active_setpoints(usage_rows: np.ndarray, occupied: np.ndarray, hour: np.ndarray, weekday: np.ndarray):
    """Heating/cooling setpoints, ventilation flag and supply settings per hour.

    Comfort setpoints apply inside the activation window *and* while occupied;
    the cooling setpoint is never allowed below the heating one so the two
    systems do not fight. Ventilation runs on weekdays inside its window.
    """
    u = usage_rows
    heat_on = (occupied > 0) & (hour >= u[..., _U["start_heat"]]) & (hour < u[..., _U["end_heat"]])
    cool_on = (occupied > 0) & (hour >= u[..., _U["start_cool"]]) & (hour < u[..., _U["end_cool"]])
    heat = np.where(heat_on, u[..., _U["t_heat_comfort"]], u[..., _U["t_heat_reduced"]])
    cool = np.where(cool_on, u[..., _U["t_cool_comfort"]], u[..., _U["t_cool_reduced"]])
    cool = np.maximum(cool, heat)
    vent = (weekday < 5) & (hour >= u[..., _U["start_vent"]]) & (hour < u[..., _U["end_vent"]])
    return heat, cool, vent, u[..., _U["t_vent"]], u[..., _U["vol_vent"]]


def _check_finite(out: np.ndarray) -> None:
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out))[0]
        raise OracleError(f"non-finite oracle output at index {tuple(int(i) for i in bad)}; check the configuration")


def step(state: ZoneState, u: HourInput, plant: ZonePlant, cfg: OracleConfig) -> tuple[ZoneState, dict[str, float]]:
    """Advance the zone by one hour."""
    one = np.ones((1, 1))
    vent_cond = plant.volume * cfg.air_heat_capacity * u.vol_vent * float(u.ventilating)
    arrays = _plant_arrays([plant])
    out, _ = kernels.simulate_zone(
        np.array([state.t_int]),
        *arrays.values(),
        one * u.occupied, one * u.t_heat_set, one * u.t_cool_set, one * vent_cond,
        one * u.t_vent, one * u.t_amb, one * u.iglob_h, float(cfg.thermostat_gain),
    )
    _check_finite(out)
    values = dict(zip(OUTPUT_CHANNELS, map(float, out[0, 0])))
    return ZoneState(values[OUTPUT_CHANNELS[0]], state.hour_index + 1), values


def initial_temperature(usage: UsageSchedule, occ: OccupancySchedule, anchor: int = 0) -> float:
    """Heating setpoint in force at hour 0."""
    weekday, hour = calendar(24, anchor)
    occupied = occupancy_indicator(occ, 24, anchor)
    heat, *_ = active_setpoints(usage_hourly(usage, 24, anchor), occupied, hour, weekday)
    return float(heat[0])


def simulate_batch(
    params: Sequence[BuildingParams],
    usages: Sequence[UsageSchedule],
    occs: Sequence[OccupancySchedule],
    weathers: Sequence[WeatherSeries],
    cfg: OracleConfig,
    *,
    anchor: int = 0,
    t_init: Sequence[float] | None = None,
    return_net: bool = False,
):
    """Run many episodes of identical horizon; returns an array (n, horizon, 8)."""
    n = len(params)
    if not (len(usages) == len(occs) == len(weathers) == n):
        raise OracleError("params, usages, occupancies and weathers must have equal length")
    horizon = len(weathers[0])
    if any(len(w) != horizon for w in weathers):
        raise OracleError("all weather series in a batch must share one horizon")
    weekday, hour = calendar(horizon, anchor)

    occupied = np.stack([occupancy_indicator(o, horizon, anchor) for o in occs])
    rows = np.stack([usage_hourly(u, horizon, anchor) for u in usages])
    heat, cool, vent, t_vent, vol_vent = active_setpoints(rows, occupied, hour[None, :], weekday[None, :])
    plants = [ZonePlant.from_params(p, cfg) for p in params]
    volume = np.array([p.volume for p in plants])
    vent_cond = vent * vol_vent * (volume * cfg.air_heat_capacity)[:, None]
    t_amb = np.stack([w.data[:, _TAMB] for w in weathers])
    iglob = np.stack([w.data[:, _IGLOB] for w in weathers])
    t0 = np.asarray(t_init, dtype=float) if t_init is not None else heat[:, 0].astype(float)

    arrays = _plant_arrays(plants)
    out, net = kernels.simulate_zone(
        np.ascontiguousarray(t0), *arrays.values(),
        np.ascontiguousarray(occupied), np.ascontiguousarray(heat, dtype=float),
        np.ascontiguousarray(cool, dtype=float), np.ascontiguousarray(vent_cond, dtype=float),
        np.ascontiguousarray(t_vent, dtype=float), np.ascontiguousarray(t_amb),
        np.ascontiguousarray(iglob), float(cfg.thermostat_gain),
    )
    _check_finite(out)
    return (out, net) if return_net else out


def simulate(
    params: BuildingParams,
    usage: UsageSchedule,
    occ: OccupancySchedule,
    weather: WeatherSeries,
    cfg: OracleConfig = OracleConfig(),
    *,
    anchor: int = 0,
    start_hour: int = 0,
    t_init: float | None = None,
) -> Episode:
    """One episode over the full length of ``weather``."""
    out = simulate_batch([params], [usage], [occ], [weather], cfg, anchor=anchor,
                         t_init=None if t_init is None else [t_init])
    return Episode(params, usage, occ, weather, out[0], anchor=anchor, start_hour=start_hour)


def stability_margin(cfg: OracleConfig, ranges: RangeSet, geometry: Geometry) -> float:
    """Worst-case ``dt * (total conductance + thermostat gain) / C`` over the ranges (must be < 1)."""
    th = ranges.theta
    vol = cfg.volume(geometry.total_floor_area)
    thin = min(th[f"facade_thickness_{i}"].min for i in range(1, 5))
    win = max(th[f"facade_window_percent_{i}"].max for i in range(1, 5)) / 100.0
    facade = sum(geometry.facade_area)
    ua = (
        facade * (1 - win) * cfg.wall_u(thin) + facade * win * cfg.window_u
        + geometry.roof_area * cfg.wall_u(th["roof_thickness"].min) + geometry.ground_area * cfg.ground_u
    ) / 1000.0
    air = vol * cfg.air_heat_capacity * (th["airchange_infiltration"].max + ranges.usage["vol_vent"].max)
    c_min = th["capacitance"].min * vol / 3600.0
    return float((ua + air + cfg.thermostat_gain) / c_min)


def check_stability(cfg: OracleConfig, ranges: RangeSet, geometry: Geometry) -> None:
    margin = stability_margin(cfg, ranges, geometry)
    if not margin < 1.0:
        raise OracleError(f"explicit Euler step unstable: dt*(UA+gain)/C = {margin:.3f} >= 1")


def output_bounds(cfg: OracleConfig, ranges: RangeSet, geometry: Geometry, headroom: float = 1.25,
                  temperature: tuple[float, float] = (0.0, 40.0)) -> dict[str, tuple[float, float]]:
    """Scaling bounds for every output channel: ``[0, headroom x installed power x 1 h]``."""
    th = ranges.theta
    vol = cfg.volume(geometry.total_floor_area)
    ahu = ranges.usage["vol_vent"].max * vol * cfg.air_heat_capacity * cfg.ahu_design_delta_t
    installed = {
        "Q_AC_OFFICE": th["power_cool_max"].max,
        "Q_HEAT_OFFICE": th["power_heat_max"].max,
        "Q_PEOPLE": th["n_occupants"].max * cfg.occupant_gain / 1000.0,
        "Q_EQP": th["n_pcs"].max * cfg.pc_gain / 1000.0,
        "Q_LIGHT": cfg.lighting_density * geometry.total_floor_area / 1000.0,
        "Q_AHU_C": ahu,
        "Q_AHU_H": ahu,
    }
    # a range pinned at zero installed power would give a degenerate scale
    upper = {k: headroom * max(v, 1.0) for k, v in installed.items()}
    upper["Q_TOTAL"] = sum(upper[k] for k in CONSUMPTION_CHANNELS)
    bounds = {"T_INT_OFFICE": tuple(temperature)}
    bounds.update({k: (0.0, v) for k, v in upper.items()})
    return bounds
