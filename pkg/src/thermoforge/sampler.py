"""Uniform grid sampling of building/usage/occupancy configurations and dataset assembly."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .domain import (
    DEFAULT_LAYOUT,
    DEFAULT_TEMPERATURE_BOUNDS,
    DEFAULT_WEATHER_BOUNDS,
    N_WORKDAYS,
    OCCUPANCY_FIELDS,
    OUTPUT_CHANNELS,
    THETA_FIELDS,
    USAGE_FIELDS,
    USAGE_HOUR_PAIRS,
    USAGE_SETPOINT_PAIRS,
    BuildingParams,
    Episode,
    FeatureLayout,
    Geometry,
    Normalizer,
    OccupancySchedule,
    ParamRange,
    RangeSet,
    UsageSchedule,
    WeatherSeries,
    consumption_total,
    expand_inputs,
    range_bounds,
)
from .errors import ArtifactError, DomainError, OracleError
from .refsim import OracleConfig, output_bounds, simulate_batch

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MAX_RESAMPLES = 1000


def draw(r: ParamRange, rng: np.random.Generator, size=None):
    """Uniform draw from the grid of ``r``."""
    n = r.n_points
    if n < 1:
        raise DomainError(f"{r.name}: empty grid")
    grid = r.grid()
    return grid[rng.integers(0, n, size=size)]


def _ordered_day(ranges: RangeSet, rng: np.random.Generator) -> np.ndarray:
    col = {n: i for i, n in enumerate(USAGE_FIELDS)}
    row = np.array([draw(ranges.usage[n], rng) for n in USAGE_FIELDS])
    pairs = [(lo, hi, True) for lo, hi in USAGE_HOUR_PAIRS] + [(lo, hi, False) for lo, hi in USAGE_SETPOINT_PAIRS]
    for lo, hi, strict in pairs:
        for _ in range(MAX_RESAMPLES):
            a, b = row[col[lo]], row[col[hi]]
            if (a < b) if strict else (a <= b):
                break
            row[col[lo]] = draw(ranges.usage[lo], rng)
            row[col[hi]] = draw(ranges.usage[hi], rng)
        else:
            raise DomainError(f"ranges of {lo}/{hi} admit no ordered pair")
    return row


def sample_configuration(
    ranges: RangeSet,
    rng: np.random.Generator,
    geometry: Geometry,
    *,
    fixed: Mapping[str, float] | None = None,
) -> tuple[BuildingParams, UsageSchedule, OccupancySchedule]:
    """Draw every variable independently from its grid (usage and occupancy per weekday).

    ``fixed`` pins selected building parameters instead of sampling them.
    """
    theta = {n: float(draw(ranges.theta[n], rng)) for n in THETA_FIELDS}
    if fixed:
        theta.update({k: float(v) for k, v in fixed.items()})
    params = BuildingParams.from_theta(theta, geometry)
    usage = UsageSchedule(np.stack([_ordered_day(ranges, rng) for _ in range(7)]), ranges)

    occ_rows = []
    for _ in range(N_WORKDAYS):
        for _ in range(MAX_RESAMPLES):
            start, end = (float(draw(ranges.occupancy[n], rng)) for n in OCCUPANCY_FIELDS)
            if start < end:
                break
        else:
            raise DomainError("occupancy ranges admit no start < end pair")
        occ_rows.append((start, end))
    return params, usage, OccupancySchedule(np.array(occ_rows), ranges)


@dataclass
class Dataset:
    """Episodes with a train/validation split tag and provenance metadata."""

    episodes: list[Episode]
    split: list[str]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.split) != len(self.episodes):
            raise DomainError("one split tag per episode")
        if set(self.split) - {"train", "validation"}:
            raise DomainError(f"unknown split tags {set(self.split) - {'train', 'validation'}}")

    def indices(self, tag: str) -> list[int]:
        return [i for i, s in enumerate(self.split) if s == tag]

    def subset(self, tag: str) -> list[Episode]:
        return [self.episodes[i] for i in self.indices(tag)]

    def arrays(self, normalizer: Normalizer, tag: str, layout: FeatureLayout = DEFAULT_LAYOUT,
               channels: Sequence[str] = OUTPUT_CHANNELS) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Features (n, T, F), scaled targets (n, T, O) and occupancy mask (n, T) for one split."""
        eps = self.subset(tag)
        if not eps:
            width = layout.width
            return np.zeros((0, 0, width)), np.zeros((0, 0, len(channels))), np.zeros((0, 0))
        x = np.stack([expand_inputs(e.params, e.usage, e.occupancy, e.weather, normalizer,
                                    anchor=e.anchor, layout=layout) for e in eps])
        y = np.stack([scale_targets(e.outputs, normalizer, channels) for e in eps])
        mask = x[:, :, layout.occupancy].copy()
        return x, y, mask


def scale_targets(outputs: np.ndarray, normalizer: Normalizer, channels: Sequence[str] = OUTPUT_CHANNELS) -> np.ndarray:
    """Oracle outputs (physical, full channel set) to scaled model targets."""
    if tuple(channels) == OUTPUT_CHANNELS:
        return normalizer.normalize_columns(outputs, OUTPUT_CHANNELS)
    cols = []
    for c in channels:
        if c == "Q_TOTAL":
            cols.append(normalizer.normalize(consumption_total(outputs), "Q_TOTAL"))
        else:
            cols.append(normalizer.normalize(outputs[:, OUTPUT_CHANNELS.index(c)], c))
    return np.column_stack(cols)


def default_normalizer(ranges: RangeSet, oracle: OracleConfig, geometry: Geometry) -> Normalizer:
    """Min-max bounds for every input and output channel: parameter ranges, fixed
    weather bounds, and outputs scaled by installed capacity."""
    bounds = {}
    for group in (ranges.theta, ranges.usage, ranges.occupancy):
        bounds.update({name: range_bounds(r) for name, r in group.items()})
    bounds.update(DEFAULT_WEATHER_BOUNDS)
    bounds.update(output_bounds(oracle, ranges, geometry, temperature=DEFAULT_TEMPERATURE_BOUNDS))
    return Normalizer(bounds)


def build_dataset(
    n_examples: int,
    weather: WeatherSeries,
    ranges: RangeSet,
    split_fraction: float,
    rng: np.random.Generator,
    *,
    geometry: Geometry,
    oracle: OracleConfig = OracleConfig(),
    horizon: int = 672,
    fixed: Mapping[str, float] | None = None,
    chunk: int = 256,
) -> Dataset:
    """Sample ``n_examples`` configurations, run the oracle, split at random.

    Each episode reads a whole-week-aligned window of the fixed weather record
    so hour 0 stays a Monday while still exposing the network to the whole
    record.
    """
    if n_examples < 0:
        raise DomainError("n_examples must be >= 0")
    if not 0.0 <= split_fraction <= 1.0:
        raise DomainError("split_fraction must lie in [0, 1]")
    if len(weather) < horizon:
        raise DomainError(f"weather record ({len(weather)} h) shorter than horizon ({horizon} h)")
    n_offsets = (len(weather) - horizon) // (7 * 24) + 1

    configs, offsets = [], []
    for _ in range(n_examples):
        params, usage, occ = sample_configuration(ranges, rng, geometry, fixed=fixed)
        params.check_ranges(ranges)
        configs.append((params, usage, occ))
        offsets.append(int(rng.integers(0, n_offsets)) * 7 * 24)

    episodes: list[Episode] = []
    for lo in range(0, n_examples, chunk):
        part = configs[lo : lo + chunk]
        windows = [weather.window(o, horizon) for o in offsets[lo : lo + chunk]]
        try:
            out = simulate_batch([c[0] for c in part], [c[1] for c in part], [c[2] for c in part], windows, oracle)
        except OracleError as exc:
            raise OracleError(f"oracle failed in sample chunk starting at {lo}: {exc}; "
                              f"first configuration {part[0][0].theta_dict()}") from exc
        for (params, usage, occ), w, o, off in zip(part, windows, out, offsets[lo : lo + chunk]):
            episodes.append(Episode(params, usage, occ, w, o, anchor=0, start_hour=off))

    n_val = int(round(split_fraction * n_examples))
    order = rng.permutation(n_examples)
    split = ["train"] * n_examples
    for i in order[:n_val]:
        split[i] = "validation"

    meta = {
        "schema_version": SCHEMA_VERSION,
        "n_examples": n_examples,
        "horizon": horizon,
        "split_fraction": split_fraction,
        "ranges": ranges.to_table(),
        "ranges_digest": _digest_json(ranges.to_table()),
        "weather_digest": hashlib.sha256(np.ascontiguousarray(weather.data).tobytes()).hexdigest(),
        "feature_layout": DEFAULT_LAYOUT.to_dict(),
        "anchor": 0,
    }
    return Dataset(episodes, split, meta)


def synthetic_dataset_digest(ds: Dataset) -> str:
    """Content hash over all episode inputs and outputs (independent of any files)."""
    h = hashlib.sha256()
    for e, s in zip(ds.episodes, ds.split):
        h.update(s.encode())
        h.update(json.dumps(e.inputs_dict(), sort_keys=True).encode())
        h.update(np.ascontiguousarray(e.outputs).tobytes())
        h.update(np.ascontiguousarray(e.weather.data).tobytes())
    return h.hexdigest()


def _digest_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def save_dataset(ds: Dataset, directory: str | Path, weather: WeatherSeries) -> Path:
    """Write ``meta.json``, ``weather.csv`` and ``episode_<i>.csv`` / ``episode_<i>.json`` pairs."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    weather.to_csv(d / "weather.csv")
    names = []
    for i, (ep, tag) in enumerate(zip(ds.episodes, ds.split)):
        ep.to_csv(d / f"episode_{i}.csv", with_weather=False)
        sidecar = dict(ep.inputs_dict(), split=tag, schema_version=SCHEMA_VERSION)
        (d / f"episode_{i}.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
        names += [f"episode_{i}.csv", f"episode_{i}.json"]
    meta = dict(ds.meta)
    meta["files"] = ["weather.csv"] + names
    meta["digest"] = directory_digest(d, meta["files"])
    (d / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return d


def directory_digest(d: Path, files: Sequence[str]) -> str:
    h = hashlib.sha256()
    for name in files:
        h.update(name.encode())
        h.update((Path(d) / name).read_bytes())
    return h.hexdigest()


def load_dataset(directory: str | Path, *, verify: bool = True) -> tuple[Dataset, WeatherSeries]:
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise ArtifactError(f"no dataset at {d} (meta.json missing)")
    meta = json.loads(meta_path.read_text())
    if verify and directory_digest(d, meta["files"]) != meta["digest"]:
        raise DomainError(f"dataset digest mismatch in {d}")
    weather = WeatherSeries.from_csv(d / "weather.csv")
    episodes, split = [], []
    for i in range(meta["n_examples"]):
        inputs = json.loads((d / f"episode_{i}.json").read_text())
        off, hz = inputs["start_hour"], inputs["horizon"]
        episodes.append(Episode.from_files(d / f"episode_{i}.csv", inputs, weather.window(off, hz)))
        split.append(inputs["split"])
    return Dataset(episodes, split, meta), weather
