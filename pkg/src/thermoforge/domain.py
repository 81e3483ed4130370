"""Core building types, parameter ranges, hourly input expansion and scaling.

Every episode is indexed hourly. Hour 0 falls on ``anchor`` (0 = Monday,
00:00) and each row of the expanded feature matrix concatenates

    [scaled building parameters | scaled weather | occupancy flag | scaled
     usage settings of the weekday containing that hour]
"""
from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError

WEEKDAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")
N_WORKDAYS = 5

THETA_FIELDS = (
    "airchange_infiltration",
    "capacitance",
    "power_heat_max",
    "power_cool_max",
    "n_occupants",
    "n_pcs",
    "percent_light_night",
    "percent_pcs_night",
    "facade_thickness_1",
    "facade_thickness_2",
    "facade_thickness_3",
    "facade_thickness_4",
    "roof_thickness",
    "facade_window_percent_1",
    "facade_window_percent_2",
    "facade_window_percent_3",
    "facade_window_percent_4",
)

USAGE_FIELDS = (
    "start_cool",
    "end_cool",
    "t_cool_reduced",
    "t_cool_comfort",
    "start_heat",
    "end_heat",
    "t_heat_reduced",
    "t_heat_comfort",
    "start_vent",
    "end_vent",
    "t_vent",
    "vol_vent",
)
# (lower, upper) pairs that must satisfy lower < upper (hours) or lower <= upper (setpoints)
USAGE_HOUR_PAIRS = (("start_cool", "end_cool"), ("start_heat", "end_heat"), ("start_vent", "end_vent"))
USAGE_SETPOINT_PAIRS = (("t_heat_reduced", "t_heat_comfort"), ("t_cool_comfort", "t_cool_reduced"))

OCCUPANCY_FIELDS = ("start_occupation", "end_occupation")

WEATHER_CHANNELS = ("DNI", "IBEAM_H", "IBEAM_N", "IDIFF_H", "IGLOB_H", "RHUM", "TAMB")
IRRADIANCE_CHANNELS = WEATHER_CHANNELS[:5]

OUTPUT_CHANNELS = (
    "T_INT_OFFICE",
    "Q_AC_OFFICE",
    "Q_HEAT_OFFICE",
    "Q_PEOPLE",
    "Q_EQP",
    "Q_LIGHT",
    "Q_AHU_C",
    "Q_AHU_H",
)
TEMPERATURE_CHANNEL = "T_INT_OFFICE"
Q_CHANNELS = OUTPUT_CHANNELS[1:]
# Q_PEOPLE is a heat gain, not something the building pays for.
CONSUMPTION_CHANNELS = ("Q_AC_OFFICE", "Q_HEAT_OFFICE", "Q_EQP", "Q_LIGHT", "Q_AHU_C", "Q_AHU_H")
REDUCED_OUTPUT_CHANNELS = ("T_INT_OFFICE", "Q_TOTAL")


@dataclass(frozen=True)
class ParamRange:
    """Uniform grid ``{min, min + step, ..., max}`` for one variable."""

    name: str
    min: float
    max: float
    step: float
    unit: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise DomainError(f"{self.name}: non-finite bounds")
        if self.min > self.max:
            raise DomainError(f"{self.name}: min {self.min} > max {self.max}")
        if not self.step > 0:
            raise DomainError(f"{self.name}: step must be > 0, got {self.step}")
        ratio = (self.max - self.min) / self.step
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise DomainError(
                f"{self.name}: (max - min) = {self.max - self.min} is not a multiple of step {self.step}"
            )

    @property
    def n_points(self) -> int:
        return int(round((self.max - self.min) / self.step)) + 1

    def grid(self) -> np.ndarray:
        # rounding keeps 0.1-style steps exact-looking (0.30000000000000004 -> 0.3)
        return np.round(self.min + self.step * np.arange(self.n_points), 10)

    def contains(self, x: float, tol: float = 1e-9) -> bool:
        return self.min - tol <= x <= self.max + tol

    @property
    def span(self) -> float:
        return self.max - self.min


@dataclass(frozen=True)
class RangeSet:
    """Sampling ranges for building parameters, daily usage and occupancy."""

    theta: Mapping[str, ParamRange]
    usage: Mapping[str, ParamRange]
    occupancy: Mapping[str, ParamRange]

    def __post_init__(self):
        for group, names in (("theta", THETA_FIELDS), ("usage", USAGE_FIELDS), ("occupancy", OCCUPANCY_FIELDS)):
            have = set(getattr(self, group))
            if have != set(names):
                missing = sorted(set(names) - have)
                extra = sorted(have - set(names))
                raise DomainError(f"{group} ranges: missing {missing}, unknown {extra}")

    @classmethod
    def from_table(cls, theta: Mapping, usage: Mapping, occupancy: Mapping) -> "RangeSet":
        def build(table):
            out = {}
            for name, spec in table.items():
                if isinstance(spec, ParamRange):
                    out[name] = spec
                else:
                    lo, hi, step, *unit = spec
                    out[name] = ParamRange(name, float(lo), float(hi), float(step), unit[0] if unit else "")
            return out

        return cls(build(theta), build(usage), build(occupancy))

    def to_table(self) -> dict:
        return {
            group: {n: [r.min, r.max, r.step, r.unit] for n, r in getattr(self, group).items()}
            for group in ("theta", "usage", "occupancy")
        }


_THETA_TABLE = {
    "airchange_infiltration": (0.1, 0.5, 0.1, "1/h"),
    "capacitance": (50, 300, 10, "kJ/(K m3)"),
    "power_heat_max": (0, 1000, 100, "kW"),
    "power_cool_max": (0, 1000, 100, "kW"),
    "n_occupants": (1000, 2000, 200, ""),
    "n_pcs": (1000, 2000, 200, ""),
    "percent_light_night": (0, 70, 10, "%"),
    "percent_pcs_night": (0, 70, 10, "%"),
    **{f"facade_thickness_{i}": (0.05, 0.15, 0.05, "m") for i in range(1, 5)},
    "roof_thickness": (0.05, 0.15, 0.05, "m"),
    **{f"facade_window_percent_{i}": (40, 50, 5, "%") for i in range(1, 5)},
}
_USAGE_TABLE = {
    "start_cool": (7, 9, 1, "h"),
    "end_cool": (18, 20, 1, "h"),
    "t_cool_reduced": (24, 30, 0.5, "degC"),
    "t_cool_comfort": (20, 24, 0.5, "degC"),
    "start_heat": (6, 8, 1, "h"),
    "end_heat": (17, 19, 1, "h"),
    "t_heat_reduced": (17, 22, 0.5, "degC"),
    "t_heat_comfort": (22, 24, 0.5, "degC"),
    "start_vent": (7, 9, 1, "h"),
    "end_vent": (18, 20, 1, "h"),
    "t_vent": (18, 26, 0.5, "degC"),
    # the published 0.7..1.7 is not a whole number of 0.3 steps
    "vol_vent": (0.7, 1.6, 0.3, "1/h"),
}
_OCCUPANCY_TABLE = {"start_occupation": (7, 9, 1, "h"), "end_occupation": (17, 20, 1, "h")}

DEFAULT_RANGES = RangeSet.from_table(_THETA_TABLE, _USAGE_TABLE, _OCCUPANCY_TABLE)


@dataclass(frozen=True)
class Geometry:
    facade_area: tuple[float, float, float, float]
    roof_area: float
    ground_area: float
    total_floor_area: float

    def __post_init__(self):
        object.__setattr__(self, "facade_area", tuple(float(a) for a in self.facade_area))
        if len(self.facade_area) != 4:
            raise DomainError("geometry needs exactly four facade areas")
        for a in (*self.facade_area, self.roof_area, self.ground_area, self.total_floor_area):
            if not (math.isfinite(a) and a > 0):
                raise DomainError(f"geometry areas must be strictly positive, got {a}")


STANLEY = Geometry((2314.0, 1917.0, 2123.0, 1725.0), 2304.0, 2304.0, 18512.0)
LIVINGSTONE = Geometry((1678.0, 1274.0, 1281.0, 1252.0), 4653.0, 4286.0, 13594.0)
BUILDINGS = {"stanley": STANLEY, "livingstone": LIVINGSTONE}


@dataclass(frozen=True)
class BuildingParams:
    """Static description of one single-zone building."""

    airchange_infiltration: float
    capacitance: float
    power_heat_max: float
    power_cool_max: float
    n_occupants: float
    n_pcs: float
    percent_light_night: float
    percent_pcs_night: float
    facade_thickness: tuple[float, float, float, float]
    roof_thickness: float
    facade_window_percent: tuple[float, float, float, float]
    facade_area: tuple[float, float, float, float]
    roof_area: float
    ground_area: float
    total_floor_area: float

    def __post_init__(self):
        for name in ("facade_thickness", "facade_window_percent", "facade_area"):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != 4:
                raise DomainError(f"{name} needs four entries")
            object.__setattr__(self, name, value)
        for name, v in self.theta_dict().items():
            if not math.isfinite(v):
                raise DomainError(f"{name} is not finite")
        Geometry(self.facade_area, self.roof_area, self.ground_area, self.total_floor_area)

    @classmethod
    def from_theta(cls, theta: Sequence[float] | Mapping[str, float], geometry: Geometry) -> "BuildingParams":
        if isinstance(theta, Mapping):
            unknown = set(theta) - set(THETA_FIELDS)
            if unknown:
                raise DomainError(f"unknown building parameters {sorted(unknown)}")
            values = [float(theta[n]) for n in THETA_FIELDS]
        else:
            values = [float(v) for v in theta]
            if len(values) != len(THETA_FIELDS):
                raise DomainError(f"expected {len(THETA_FIELDS)} building parameters, got {len(values)}")
        v = dict(zip(THETA_FIELDS, values))
        return cls(
            airchange_infiltration=v["airchange_infiltration"],
            capacitance=v["capacitance"],
            power_heat_max=v["power_heat_max"],
            power_cool_max=v["power_cool_max"],
            n_occupants=v["n_occupants"],
            n_pcs=v["n_pcs"],
            percent_light_night=v["percent_light_night"],
            percent_pcs_night=v["percent_pcs_night"],
            facade_thickness=tuple(v[f"facade_thickness_{i}"] for i in range(1, 5)),
            roof_thickness=v["roof_thickness"],
            facade_window_percent=tuple(v[f"facade_window_percent_{i}"] for i in range(1, 5)),
            facade_area=geometry.facade_area,
            roof_area=geometry.roof_area,
            ground_area=geometry.ground_area,
            total_floor_area=geometry.total_floor_area,
        )

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.facade_area, self.roof_area, self.ground_area, self.total_floor_area)

    def theta_dict(self) -> dict[str, float]:
        out = {
            "airchange_infiltration": self.airchange_infiltration,
            "capacitance": self.capacitance,
            "power_heat_max": self.power_heat_max,
            "power_cool_max": self.power_cool_max,
            "n_occupants": self.n_occupants,
            "n_pcs": self.n_pcs,
            "percent_light_night": self.percent_light_night,
            "percent_pcs_night": self.percent_pcs_night,
        }
        out.update({f"facade_thickness_{i + 1}": t for i, t in enumerate(self.facade_thickness)})
        out["roof_thickness"] = self.roof_thickness
        out.update({f"facade_window_percent_{i + 1}": p for i, p in enumerate(self.facade_window_percent)})
        return {n: float(out[n]) for n in THETA_FIELDS}

    def theta_vector(self) -> np.ndarray:
        d = self.theta_dict()
        return np.array([d[n] for n in THETA_FIELDS])

    def with_theta(self, **updates: float) -> "BuildingParams":
        d = self.theta_dict()
        unknown = set(updates) - set(d)
        if unknown:
            raise DomainError(f"unknown building parameters {sorted(unknown)}")
        d.update(updates)
        return BuildingParams.from_theta(d, self.geometry)

    def check_ranges(self, ranges: RangeSet) -> None:
        for name, v in self.theta_dict().items():
            r = ranges.theta[name]
            if not r.contains(v):
                raise DomainError(f"{name} = {v} outside [{r.min}, {r.max}]")

    def to_dict(self) -> dict:
        g = self.geometry
        return {
            "theta": self.theta_dict(),
            "geometry": {
                "facade_area": list(g.facade_area),
                "roof_area": g.roof_area,
                "ground_area": g.ground_area,
                "total_floor_area": g.total_floor_area,
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BuildingParams":
        return cls.from_theta(d["theta"], Geometry(**d["geometry"]))


def derive_occupancy_defaults(total_floor_area: float) -> tuple[int, int]:
    """Occupant and PC counts from floor area: 2/3 occupied, 12 m2 each, 1.2 PCs per occupant."""
    if not (math.isfinite(total_floor_area) and total_floor_area > 0):
        raise DomainError(f"floor area must be > 0, got {total_floor_area}")
    occupants = (2.0 / 3.0) * total_floor_area / 12.0
    # round half up; Python's round() is banker's rounding
    return int(math.floor(occupants + 0.5)), int(math.floor(1.2 * occupants + 0.5))


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class UsageSchedule:
    """HVAC settings, one row of ``USAGE_FIELDS`` per weekday (Monday first).

    Ordering invariants are always enforced; range membership is checked
    against ``ranges`` unless it is ``None``.
    """

    values: np.ndarray
    ranges: RangeSet | None = field(default=DEFAULT_RANGES, repr=False)

    def __post_init__(self):
        values = _readonly(self.values)
        if values.shape != (7, len(USAGE_FIELDS)):
            raise DomainError(f"usage schedule must be 7 x {len(USAGE_FIELDS)}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("usage schedule contains non-finite values")
        object.__setattr__(self, "values", values)
        col = {n: i for i, n in enumerate(USAGE_FIELDS)}
        for day, row in zip(WEEKDAYS, values):
            for lo, hi in USAGE_HOUR_PAIRS:
                if not row[col[lo]] < row[col[hi]]:
                    raise DomainError(f"{day}: {lo}={row[col[lo]]} must be < {hi}={row[col[hi]]}")
            for lo, hi in USAGE_SETPOINT_PAIRS:
                if not row[col[lo]] <= row[col[hi]]:
                    raise DomainError(f"{day}: {lo}={row[col[lo]]} must be <= {hi}={row[col[hi]]}")
            if self.ranges is not None:
                for name, v in zip(USAGE_FIELDS, row):
                    r = self.ranges.usage[name]
                    if not r.contains(v):
                        raise DomainError(f"{day}: {name}={v} outside [{r.min}, {r.max}]")

    def __eq__(self, other):
        return isinstance(other, UsageSchedule) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())

    @classmethod
    def uniform(cls, day: Mapping[str, float], ranges: RangeSet | None = DEFAULT_RANGES) -> "UsageSchedule":
        """Same settings every day of the week."""
        row = [float(day[n]) for n in USAGE_FIELDS]
        return cls(np.tile(row, (7, 1)), ranges)

    def day(self, weekday: int) -> dict[str, float]:
        return dict(zip(USAGE_FIELDS, map(float, self.values[weekday])))

    def to_dict(self) -> dict:
        return {d: self.day(i) for i, d in enumerate(WEEKDAYS)}

    @classmethod
    def from_dict(cls, d: Mapping, ranges: RangeSet | None = DEFAULT_RANGES) -> "UsageSchedule":
        return cls(np.array([[float(d[day][n]) for n in USAGE_FIELDS] for day in WEEKDAYS]), ranges)


@dataclass(frozen=True, eq=False)
class OccupancySchedule:
    """Occupation window ``[start, end)`` in hours for Monday..Friday; weekends are empty."""

    values: np.ndarray
    ranges: RangeSet | None = field(default=DEFAULT_RANGES, repr=False)

    def __post_init__(self):
        values = _readonly(self.values)
        if values.shape != (N_WORKDAYS, 2):
            raise DomainError(f"occupancy schedule must be 5 x 2, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("occupancy schedule contains non-finite values")
        object.__setattr__(self, "values", values)
        for day, (start, end) in zip(WEEKDAYS, values):
            if not start < end:
                raise DomainError(f"{day}: start_occupation={start} must be < end_occupation={end}")
            if self.ranges is not None:
                for name, v in zip(OCCUPANCY_FIELDS, (start, end)):
                    r = self.ranges.occupancy[name]
                    if not r.contains(v):
                        raise DomainError(f"{day}: {name}={v} outside [{r.min}, {r.max}]")

    def __eq__(self, other):
        return isinstance(other, OccupancySchedule) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())

    @classmethod
    def uniform(cls, start: float, end: float, ranges: RangeSet | None = DEFAULT_RANGES) -> "OccupancySchedule":
        return cls(np.tile([float(start), float(end)], (N_WORKDAYS, 1)), ranges)

    def to_dict(self) -> dict:
        return {d: {"start_occupation": float(s), "end_occupation": float(e)} for d, (s, e) in zip(WEEKDAYS, self.values)}

    @classmethod
    def from_dict(cls, d: Mapping, ranges: RangeSet | None = DEFAULT_RANGES) -> "OccupancySchedule":
        return cls(np.array([[float(d[day][n]) for n in OCCUPANCY_FIELDS] for day in WEEKDAYS[:N_WORKDAYS]]), ranges)


@dataclass(frozen=True, eq=False)
class WeatherSeries:
    """Hourly weather, one column per entry of ``WEATHER_CHANNELS``."""

    data: np.ndarray

    def __post_init__(self):
        data = _readonly(self.data)
        if data.ndim != 2 or data.shape[1] != len(WEATHER_CHANNELS):
            raise DomainError(f"weather must be hours x {len(WEATHER_CHANNELS)}, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DomainError("weather contains non-finite values")
        if np.any(data[:, : len(IRRADIANCE_CHANNELS)] < 0):
            raise DomainError("negative irradiance")
        rhum = data[:, WEATHER_CHANNELS.index("RHUM")]
        if np.any((rhum < 0) | (rhum > 100)):
            raise DomainError("relative humidity outside [0, 100]")
        object.__setattr__(self, "data", data)

    def __len__(self):
        return self.data.shape[0]

    def __eq__(self, other):
        return isinstance(other, WeatherSeries) and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash(self.data.tobytes())

    def channel(self, name: str) -> np.ndarray:
        return self.data[:, WEATHER_CHANNELS.index(name)]

    def window(self, start: int, length: int) -> "WeatherSeries":
        if start < 0 or start + length > len(self):
            raise DomainError(f"window [{start}, {start + length}) outside weather record of {len(self)} h")
        return WeatherSeries(self.data[start : start + length])

    @classmethod
    def from_csv(cls, path: str | Path) -> "WeatherSeries":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != WEATHER_CHANNELS:
                raise DomainError(f"{path}: weather header must be exactly {','.join(WEATHER_CHANNELS)}, got {header}")
            rows = [[float(v) for v in row] for row in reader if row]
        if any(len(r) != len(WEATHER_CHANNELS) for r in rows):
            raise DomainError(f"{path}: every row needs {len(WEATHER_CHANNELS)} values")
        return cls(np.array(rows, dtype=float).reshape(-1, len(WEATHER_CHANNELS)))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(WEATHER_CHANNELS)
            w.writerows([[repr(float(v)) for v in row] for row in self.data])


def synthetic_weather(n_days: int, seed: int = 0, *, latitude: float = 48.8, first_day_of_year: int = 152) -> WeatherSeries:
    """Summer-like weather record: diurnal temperature cycle plus clear-sky sun scaled by daily cloudiness.

    ``first_day_of_year=152`` is June 1st; day 0 is treated as a Monday.
    """
    rng = np.random.default_rng(seed)
    hours = np.arange(n_days * 24)
    day = hours // 24
    hod = hours % 24 + 0.5
    doy = first_day_of_year + day

    decl = np.radians(23.44) * np.sin(2 * np.pi * (284 + doy) / 365.0)
    lat = np.radians(latitude)
    hour_angle = np.radians(15.0 * (hod - 12.0))
    sin_elev = np.sin(lat) * np.sin(decl) + np.cos(lat) * np.cos(decl) * np.cos(hour_angle)
    sin_elev = np.clip(sin_elev, 0.0, None)

    clear_day = rng.uniform(0.35, 1.0, n_days)
    clear = clear_day[day]
    dni = 900.0 * clear * sin_elev**0.3 * (sin_elev > 0)
    ibeam_h = dni * sin_elev
    idiff_h = (60.0 + 120.0 * (1.0 - clear)) * sin_elev**0.8
    iglob_h = ibeam_h + idiff_h

    walk = np.cumsum(rng.normal(0.0, 1.2, n_days))
    # sunny days run warmer
    mean_t = np.clip(19.0 + 0.8 * (walk - walk.mean()) + 5.0 * (clear_day - 0.67), 13.0, 27.0)
    amplitude = rng.uniform(3.0, 6.5, n_days)
    tamb = mean_t[day] + amplitude[day] * np.sin(2 * np.pi * (hod - 9.0) / 24.0)
    rhum = np.clip(70.0 - 2.2 * (tamb - mean_t[day]) + rng.normal(0.0, 4.0, hours.size), 15.0, 100.0)

    data = np.column_stack([dni, ibeam_h, dni, idiff_h, iglob_h, rhum, tamb])
    return WeatherSeries(np.round(data, 6))


class Normalizer:
    """Per-channel min-max scaling between physical units and [0, 1].

    ``clamp_counts`` tallies how often each channel had to be clamped.
    """

    def __init__(self, bounds: Mapping[str, tuple[float, float]]):
        checked = {}
        for name, (lo, hi) in bounds.items():
            lo, hi = float(lo), float(hi)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise DomainError(f"channel {name}: need finite lo < hi, got ({lo}, {hi})")
            checked[name] = (lo, hi)
        self._bounds = checked
        self.clamp_counts: Counter = Counter()

    @property
    def bounds(self) -> dict[str, tuple[float, float]]:
        return dict(self._bounds)

    def _get(self, channel: str) -> tuple[float, float]:
        try:
            return self._bounds[channel]
        except KeyError:
            raise DomainError(f"unknown channel {channel!r}") from None

    def normalize(self, x, channel: str):
        lo, hi = self._get(channel)
        u = (np.asarray(x, dtype=float) - lo) / (hi - lo)
        out = np.clip(u, 0.0, 1.0)
        n_clamped = int(np.count_nonzero(out != u))
        if n_clamped:
            self.clamp_counts[channel] += n_clamped
        return float(out) if out.ndim == 0 else out

    def denormalize(self, u, channel: str):
        lo, hi = self._get(channel)
        x = lo + np.asarray(u, dtype=float) * (hi - lo)
        return float(x) if x.ndim == 0 else x

    def normalize_columns(self, x: np.ndarray, channels: Sequence[str]) -> np.ndarray:
        lo, hi = self._columns(channels)
        u = (np.asarray(x, dtype=float) - lo) / (hi - lo)
        out = np.clip(u, 0.0, 1.0)
        if not np.array_equal(out, u):
            bad = np.count_nonzero(out != u, axis=tuple(range(u.ndim - 1)))
            for name, n in zip(channels, np.atleast_1d(bad)):
                if n:
                    self.clamp_counts[name] += int(n)
        return out

    def denormalize_columns(self, u: np.ndarray, channels: Sequence[str]) -> np.ndarray:
        lo, hi = self._columns(channels)
        return lo + np.asarray(u, dtype=float) * (hi - lo)

    def _columns(self, channels):
        pairs = [self._get(c) for c in channels]
        return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])

    def to_dict(self) -> dict:
        return {k: [lo, hi] for k, (lo, hi) in self._bounds.items()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Normalizer":
        return cls({k: tuple(v) for k, v in d.items()})


DEFAULT_WEATHER_BOUNDS = {
    "DNI": (0.0, 1200.0),
    "IBEAM_H": (0.0, 1200.0),
    "IBEAM_N": (0.0, 1200.0),
    "IDIFF_H": (0.0, 1200.0),
    "IGLOB_H": (0.0, 1200.0),
    "RHUM": (0.0, 100.0),
    "TAMB": (-10.0, 45.0),
}
DEFAULT_TEMPERATURE_BOUNDS = (0.0, 40.0)


def range_bounds(r: ParamRange) -> tuple[float, float]:
    if r.max > r.min:
        return r.min, r.max
    return r.min - 0.5 * r.step, r.max + 0.5 * r.step


@dataclass(frozen=True)
class FeatureLayout:
    """Column layout of the hourly feature matrix."""

    theta_fields: tuple[str, ...] = THETA_FIELDS
    weather_channels: tuple[str, ...] = WEATHER_CHANNELS
    usage_fields: tuple[str, ...] = USAGE_FIELDS

    @property
    def theta(self) -> slice:
        return slice(0, len(self.theta_fields))

    @property
    def weather(self) -> slice:
        start = len(self.theta_fields)
        return slice(start, start + len(self.weather_channels))

    @property
    def occupancy(self) -> int:
        return len(self.theta_fields) + len(self.weather_channels)

    @property
    def usage(self) -> slice:
        start = self.occupancy + 1
        return slice(start, start + len(self.usage_fields))

    @property
    def width(self) -> int:
        return self.usage.stop

    def to_dict(self) -> dict:
        return {
            "theta_fields": list(self.theta_fields),
            "weather_channels": list(self.weather_channels),
            "usage_fields": list(self.usage_fields),
            "width": self.width,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureLayout":
        layout = cls(tuple(d["theta_fields"]), tuple(d["weather_channels"]), tuple(d["usage_fields"]))
        if "width" in d and d["width"] != layout.width:
            raise DomainError("feature layout width does not match its fields")
        return layout


DEFAULT_LAYOUT = FeatureLayout()


def calendar(horizon: int, anchor: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Weekday (0 = Monday) and hour-of-day of every hour of an episode."""
    if horizon <= 0 or horizon % 24:
        raise DomainError(f"horizon must be a positive whole number of days, got {horizon} h")
    if not 0 <= anchor < 7:
        raise DomainError(f"anchor weekday must be in 0..6, got {anchor}")
    k = np.arange(horizon)
    return (anchor + k // 24) % 7, k % 24


def occupancy_indicator(occ: OccupancySchedule, horizon: int, anchor: int = 0) -> np.ndarray:
    weekday, hour = calendar(horizon, anchor)
    workday = weekday < N_WORKDAYS
    idx = np.minimum(weekday, N_WORKDAYS - 1)
    start, end = occ.values[idx, 0], occ.values[idx, 1]
    return (workday & (hour >= start) & (hour < end)).astype(float)


def usage_hourly(usage: UsageSchedule, horizon: int, anchor: int = 0) -> np.ndarray:
    """Physical usage settings in force at every hour, shape (horizon, 12)."""
    weekday, _ = calendar(horizon, anchor)
    return usage.values[weekday]


def expand_inputs(
    params: BuildingParams,
    usage: UsageSchedule,
    occ: OccupancySchedule,
    weather: WeatherSeries,
    normalizer: Normalizer,
    *,
    anchor: int = 0,
    layout: FeatureLayout = DEFAULT_LAYOUT,
) -> np.ndarray:
    """Hourly feature matrix of shape ``(len(weather), layout.width)``."""
    horizon = len(weather)
    weekday, _ = calendar(horizon, anchor)
    theta = params.theta_dict()
    out = np.empty((horizon, layout.width))
    out[:, layout.theta] = normalizer.normalize_columns(
        np.array([theta[n] for n in layout.theta_fields]), layout.theta_fields
    )
    cols = [WEATHER_CHANNELS.index(c) for c in layout.weather_channels]
    out[:, layout.weather] = normalizer.normalize_columns(weather.data[:, cols], layout.weather_channels)
    out[:, layout.occupancy] = occupancy_indicator(occ, horizon, anchor)
    ucols = [USAGE_FIELDS.index(f) for f in layout.usage_fields]
    day_rows = normalizer.normalize_columns(usage.values[:, ucols], layout.usage_fields)
    out[:, layout.usage] = day_rows[weekday]
    return out


def hour_of_episode(k: int, horizon: int, anchor: int = 0) -> tuple[int, int]:
    """(weekday, hour of day) of hour ``k``."""
    if not 0 <= k < horizon:
        raise DomainError(f"hour index {k} outside horizon {horizon}")
    return (anchor + k // 24) % 7, k % 24


def consumption_total(q: np.ndarray, channels: Sequence[str] = OUTPUT_CHANNELS) -> np.ndarray:
    """Sum of the paid-for consumption channels along the last axis."""
    idx = [list(channels).index(c) for c in CONSUMPTION_CHANNELS if c in channels]
    return np.asarray(q)[..., idx].sum(axis=-1)


def midpoint_params(ranges: RangeSet, geometry: Geometry, **fixed: float) -> BuildingParams:
    theta = {n: 0.5 * (r.min + r.max) for n, r in ranges.theta.items()}
    theta.update(fixed)
    return BuildingParams.from_theta(theta, geometry)



@dataclass(frozen=True, eq=False)
class Episode:
    """One simulated or observed run: inputs plus hourly outputs.

    ``start_hour`` locates hour 0 inside the weather record it was cut from,
    which is what window-overlap checks compare.
    """

    params: BuildingParams
    usage: UsageSchedule
    occupancy: OccupancySchedule
    weather: WeatherSeries
    outputs: np.ndarray
    anchor: int = 0
    start_hour: int = 0

    def __post_init__(self):
        out = _readonly(self.outputs)
        if out.shape != (len(self.weather), len(OUTPUT_CHANNELS)):
            raise DomainError(f"outputs must be {len(self.weather)} x {len(OUTPUT_CHANNELS)}, got {out.shape}")
        calendar(len(self.weather), self.anchor)
        if np.any(out[:, 1:] < 0):
            raise DomainError("consumption channels must be >= 0")
        object.__setattr__(self, "outputs", out)

    @property
    def horizon(self) -> int:
        return len(self.weather)

    def channel(self, name: str) -> np.ndarray:
        return self.outputs[:, OUTPUT_CHANNELS.index(name)]

    @property
    def t_int(self) -> np.ndarray:
        return self.channel(TEMPERATURE_CHANNEL)

    @property
    def q_total(self) -> np.ndarray:
        return consumption_total(self.outputs)

    @property
    def occupied(self) -> np.ndarray:
        return occupancy_indicator(self.occupancy, self.horizon, self.anchor)

    @property
    def window(self) -> tuple[int, int]:
        return self.start_hour, self.start_hour + self.horizon

    def inputs_dict(self) -> dict:
        return {
            "building": self.params.to_dict(),
            "usage": self.usage.to_dict(),
            "occupancy": self.occupancy.to_dict(),
            "anchor": self.anchor,
            "start_hour": self.start_hour,
            "horizon": self.horizon,
        }

    def to_csv(self, path: str | Path, *, with_weather: bool = True) -> None:
        header = list(OUTPUT_CHANNELS) + (list(WEATHER_CHANNELS) if with_weather else [])
        table = np.hstack([self.outputs, self.weather.data]) if with_weather else self.outputs
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows([[repr(float(v)) for v in row] for row in table])

    @classmethod
    def from_files(cls, csv_path: str | Path, inputs: Mapping, weather: WeatherSeries | None = None) -> "Episode":
        with open(csv_path, newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            table = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
        n_out = len(OUTPUT_CHANNELS)
        if header[:n_out] != OUTPUT_CHANNELS:
            raise DomainError(f"{csv_path}: expected output columns {OUTPUT_CHANNELS}, got {header[:n_out]}")
        if weather is None:
            if header[n_out:] != WEATHER_CHANNELS:
                raise DomainError(f"{csv_path}: missing weather columns {WEATHER_CHANNELS}")
            weather = WeatherSeries(table[:, n_out:])
        return cls(
            params=BuildingParams.from_dict(inputs["building"]),
            usage=UsageSchedule.from_dict(inputs["usage"], ranges=None),
            occupancy=OccupancySchedule.from_dict(inputs["occupancy"], ranges=None),
            weather=weather,
            outputs=table[:, :n_out],
            anchor=int(inputs.get("anchor", 0)),
            start_hour=int(inputs.get("start_hour", 0)),
        )

    def slice_days(self, first_day: int, n_days: int) -> "Episode":
        """Sub-episode covering whole days ``[first_day, first_day + n_days)``."""
        start, length = 24 * first_day, 24 * n_days
        if first_day < 0 or start + length > self.horizon or n_days <= 0:
            raise DomainError(f"days [{first_day}, {first_day + n_days}) outside episode of {self.horizon // 24} days")
        return Episode(
            self.params,
            self.usage,
            self.occupancy,
            self.weather.window(start, length),
            self.outputs[start : start + length],
            anchor=(self.anchor + first_day) % 7,
            start_hour=self.start_hour + start,
        )
