"""NSGA-II search over weekly usage schedules with a frozen building model.

Objectives (both minimised):

* ``comf``: RMS deviation of indoor temperature from ``t_ref`` over occupied hours
* ``q_mean``: mean hourly total consumption

The genome holds the 7 x 12 schedule variables, each encoded as its grid
index divided by (n_points - 1), so every genome value lies in [0, 1] and
decoding snaps onto the grid.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import (
    USAGE_FIELDS,
    USAGE_HOUR_PAIRS,
    USAGE_SETPOINT_PAIRS,
    WEEKDAYS,
    BuildingParams,
    OccupancySchedule,
    RangeSet,
    UsageSchedule,
    WeatherSeries,
    occupancy_indicator,
)
from .errors import DomainError
from .kernels import domination_ranks
from .predictors import Predictor

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
T_REF = 22.5


# ---------------------------------------------------------------------------
# objectives


def comfort(t_int, occupied, t_ref: float = T_REF) -> float:
    """RMS gap to ``t_ref`` over occupied hours (the averaging sits inside the root)."""
    t = np.asarray(t_int, dtype=float)
    occ = np.asarray(occupied, dtype=bool)
    if t.shape != occ.shape:
        raise DomainError("temperature and occupancy series differ in shape")
    if not occ.any():
        raise DomainError("no occupied hours: comfort undefined")
    return math.sqrt(float(np.mean((t[occ] - t_ref) ** 2)))


def mean_consumption(q_total) -> float:
    q = np.asarray(q_total, dtype=float)
    if q.size == 0:
        raise DomainError("empty consumption series")
    return float(np.mean(q))


def objectives(t_int, q_total, occupied, t_ref: float = T_REF) -> tuple[float, float]:
    return comfort(t_int, occupied, t_ref), mean_consumption(q_total)


# ---------------------------------------------------------------------------
# sorting and crowding


def non_dominated_sort(objs) -> list[np.ndarray]:
    """Indices per front, best front first (minimisation)."""
    f = np.asarray(objs, dtype=float)
    if f.ndim != 2:
        raise DomainError("objectives must be a 2-D array")
    if len(f) == 0:
        return []
    ranks = domination_ranks(f)
    return [np.flatnonzero(ranks == r) for r in range(int(ranks.max()) + 1)]


def front_ranks(objs) -> np.ndarray:
    f = np.asarray(objs, dtype=float)
    return domination_ranks(f) if len(f) else np.zeros(0, dtype=np.int64)


def crowding_distance(objs) -> np.ndarray:
    """Crowding distance of the points of one front.

    Computed on the distinct objective vectors; extremes of each objective
    get +inf and repeated copies of a vector (after its first occurrence)
    get 0 so duplicates never look isolated.
    """
    f = np.asarray(objs, dtype=float)
    n = len(f)
    if n == 0:
        return np.zeros(0)
    uniq, first, inverse = np.unique(f, axis=0, return_index=True, return_inverse=True)
    inverse = np.ravel(inverse)
    m = len(uniq)
    d = np.zeros(m)
    if m <= 2:
        d[:] = np.inf
    else:
        for k in range(f.shape[1]):
            order = np.argsort(uniq[:, k], kind="stable")
            vals = uniq[order, k]
            d[order[0]] = d[order[-1]] = np.inf
            span = vals[-1] - vals[0]
            if span > 0:
                d[order[1:-1]] += (vals[2:] - vals[:-2]) / span
    out = np.zeros(n)
    out[first] = d
    return out


def dominates(a, b) -> bool:
    a, b = np.asarray(a), np.asarray(b)
    return bool(np.all(a <= b) and np.any(a < b))


def hypervolume_2d(points, ref) -> float:
    """Area dominated by ``points`` and bounded by ``ref`` (both objectives minimised)."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    p = p[np.all(p < np.asarray(ref), axis=1)]
    if len(p) == 0:
        return 0.0
    p = p[np.lexsort((p[:, 1], p[:, 0]))]
    # sweep left to right; each new lower y adds a strip reaching ref[0]
    area, best_y = 0.0, ref[1]
    for x, y in p:
        if y < best_y:
            area += (ref[0] - x) * (best_y - y)
            best_y = y
    return area


# ---------------------------------------------------------------------------
# schedule encoding


@dataclass(frozen=True)
class ScheduleSpace:
    """7 x 12 grid-encoded usage schedule."""

    ranges: RangeSet

    @property
    def length(self) -> int:
        return 7 * len(USAGE_FIELDS)

    def _grid(self):
        lo = np.array([self.ranges.usage[n].min for n in USAGE_FIELDS])
        step = np.array([self.ranges.usage[n].step for n in USAGE_FIELDS])
        top = np.array([self.ranges.usage[n].n_points - 1 for n in USAGE_FIELDS])
        return lo, step, top

    def indices(self, genome) -> np.ndarray:
        lo, step, top = self._grid()
        g = np.clip(np.asarray(genome, dtype=float).reshape(-1, 7, len(USAGE_FIELDS)), 0.0, 1.0)
        return np.round(g * top).astype(np.int64)

    def values(self, genome) -> np.ndarray:
        lo, step, _ = self._grid()
        return np.round(lo + self.indices(genome) * step, 10)

    def encode(self, usage: UsageSchedule) -> np.ndarray:
        lo, step, top = self._grid()
        idx = np.round((usage.values - lo) / step)
        if np.any(idx < 0) or np.any(idx > top):
            raise DomainError("schedule lies outside the optimisation ranges")
        return (idx / np.where(top > 0, top, 1)).ravel()

    def repair(self, genome) -> np.ndarray:
        """Snap to the grid and fix ordering violations; returns a genome of equal shape."""
        g = np.asarray(genome, dtype=float)
        _, _, top = self._grid()
        idx = self.indices(g)
        vals = self.values(g)
        col = {n: i for i, n in enumerate(USAGE_FIELDS)}
        pairs = [(a, b, True) for a, b in USAGE_HOUR_PAIRS] + [(a, b, False) for a, b in USAGE_SETPOINT_PAIRS]
        for a, b, strict in pairs:
            ia, ib = col[a], col[b]
            ga, gb = self.ranges.usage[a].grid(), self.ranges.usage[b].grid()
            bad = (vals[..., ia] >= vals[..., ib]) if strict else (vals[..., ia] > vals[..., ib])
            for pos in zip(*np.nonzero(bad)):
                va = vals[pos + (ia,)]
                ok_b = np.flatnonzero(gb > va) if strict else np.flatnonzero(gb >= va)
                if ok_b.size:
                    idx[pos + (ib,)] = ok_b[0]
                    vals[pos + (ib,)] = gb[ok_b[0]]
                    continue
                vb = gb[-1]
                ok_a = np.flatnonzero(ga < vb) if strict else np.flatnonzero(ga <= vb)
                if not ok_a.size:
                    raise DomainError(f"ranges of {a}/{b} admit no ordered pair")
                idx[pos + (ia,)] = ok_a[-1]
                idx[pos + (ib,)] = len(gb) - 1
                vals[pos + (ia,)] = ga[ok_a[-1]]
                vals[pos + (ib,)] = vb
        out = idx / np.where(top > 0, top, 1)
        return out.reshape(g.shape)

    def decode(self, genome) -> UsageSchedule:
        g = self.repair(np.asarray(genome, dtype=float).reshape(self.length))
        return UsageSchedule(self.values(g)[0], self.ranges)

    def column_names(self) -> list[str]:
        return [f"{day}.{name}" for day in WEEKDAYS for name in USAGE_FIELDS]


# ---------------------------------------------------------------------------
# the optimisation problem


@dataclass
class ScheduleProblem:
    predictor: Predictor
    theta: BuildingParams
    occupancy: OccupancySchedule
    weather: WeatherSeries
    space: ScheduleSpace
    t_ref: float = T_REF
    anchor: int = 0

    def __post_init__(self):
        self.occupied = occupancy_indicator(self.occupancy, len(self.weather), self.anchor).astype(bool)
        if not self.occupied.any():
            raise DomainError("optimisation horizon contains no occupied hours")

    def series(self, usages: Sequence[UsageSchedule]) -> tuple[np.ndarray, np.ndarray]:
        return self.predictor.predict([self.theta], list(usages), self.occupancy, self.weather, anchor=self.anchor)

    def evaluate_usages(self, usages: Sequence[UsageSchedule]) -> np.ndarray:
        t, q = self.series(usages)
        objs = np.array([objectives(t[i], q[i], self.occupied, self.t_ref) for i in range(len(usages))])
        if not np.all(np.isfinite(objs)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(objs), axis=1))[0])
            raise DomainError(f"non-finite objectives for schedule {usages[bad].to_dict()}")
        return objs

    def evaluate(self, genomes: np.ndarray) -> np.ndarray:
        return self.evaluate_usages([self.space.decode(g) for g in genomes])


@dataclass(frozen=True)
class NsgaConfig:
    population: int = 64
    generations: int = 200
    eta_crossover: float = 15.0
    eta_mutation: float = 20.0
    p_crossover: float = 0.9
    p_mutation: float | None = None  # default 1 / genome length
    seed_baseline: bool = True

    def __post_init__(self):
        if self.population < 4 or self.population % 2:
            raise DomainError("population size must be even and >= 4")
        if self.generations < 0:
            raise DomainError("generations must be >= 0")


@dataclass(frozen=True)
class ParetoPoint:
    comf: float
    q_mean: float
    genome: np.ndarray

    def usage(self, space: ScheduleSpace) -> UsageSchedule:
        return space.decode(self.genome)


@dataclass
class NsgaResult:
    front: list[ParetoPoint]
    hypervolume: list[float]
    reference: tuple[float, float]
    evaluated: np.ndarray  # every objective vector evaluated, in order
    population: np.ndarray
    population_objs: np.ndarray
    history: list[dict] = field(default_factory=list)


def _ranks_and_crowding(objs):
    ranks = front_ranks(objs)
    crowd = np.zeros(len(objs))
    for r in np.unique(ranks):
        idx = np.flatnonzero(ranks == r)
        crowd[idx] = crowding_distance(objs[idx])
    return ranks, crowd


def _tournament(rng, ranks, crowd, n):
    a = rng.integers(0, len(ranks), n)
    b = rng.integers(0, len(ranks), n)
    a_wins = (ranks[a] < ranks[b]) | ((ranks[a] == ranks[b]) & (crowd[a] >= crowd[b]))
    return np.where(a_wins, a, b)


def sbx(p1, p2, eta: float, rng, p_cross: float = 0.9, lo: float = 0.0, hi: float = 1.0):
    """Simulated binary crossover with bounds, per-variable exchange probability 0.5."""
    c1, c2 = p1.copy(), p2.copy()
    if rng.random() > p_cross:
        return c1, c2
    n = len(p1)
    for i in range(n):
        if rng.random() > 0.5 or abs(p1[i] - p2[i]) < 1e-14:
            continue
        y1, y2 = min(p1[i], p2[i]), max(p1[i], p2[i])
        r = rng.random()
        beta = 1.0 + 2.0 * (y1 - lo) / (y2 - y1)
        alpha = 2.0 - beta ** -(eta + 1)
        bq = (r * alpha) ** (1 / (eta + 1)) if r <= 1 / alpha else (1 / (2 - r * alpha)) ** (1 / (eta + 1))
        k1 = 0.5 * ((y1 + y2) - bq * (y2 - y1))
        beta = 1.0 + 2.0 * (hi - y2) / (y2 - y1)
        alpha = 2.0 - beta ** -(eta + 1)
        bq = (r * alpha) ** (1 / (eta + 1)) if r <= 1 / alpha else (1 / (2 - r * alpha)) ** (1 / (eta + 1))
        k2 = 0.5 * ((y1 + y2) + bq * (y2 - y1))
        k1, k2 = min(max(k1, lo), hi), min(max(k2, lo), hi)
        if rng.random() <= 0.5:
            k1, k2 = k2, k1
        c1[i], c2[i] = k1, k2
    return c1, c2


def polynomial_mutation(x, eta: float, p_mut: float, rng, lo: float = 0.0, hi: float = 1.0):
    y = x.copy()
    for i in range(len(y)):
        if rng.random() > p_mut:
            continue
        v = y[i]
        d1, d2 = (v - lo) / (hi - lo), (hi - v) / (hi - lo)
        r = rng.random()
        power = 1.0 / (eta + 1.0)
        if r < 0.5:
            xy = 1.0 - d1
            dq = (2 * r + (1 - 2 * r) * xy ** (eta + 1)) ** power - 1.0
        else:
            xy = 1.0 - d2
            dq = 1.0 - (2 * (1 - r) + 2 * (r - 0.5) * xy ** (eta + 1)) ** power
        y[i] = min(max(v + dq * (hi - lo), lo), hi)
    return y


def _environmental_selection(objs, n_keep):
    ranks, crowd = _ranks_and_crowding(objs)
    chosen = []
    for r in range(int(ranks.max()) + 1):
        idx = np.flatnonzero(ranks == r)
        if len(chosen) + len(idx) <= n_keep:
            chosen.extend(idx.tolist())
            continue
        order = idx[np.argsort(-crowd[idx], kind="stable")]
        chosen.extend(order[: n_keep - len(chosen)].tolist())
        break
    return np.array(chosen, dtype=np.int64)


def _update_archive(arch_g, arch_f, new_g, new_f):
    g = np.vstack([arch_g, new_g]) if len(arch_g) else new_g
    f = np.vstack([arch_f, new_f]) if len(arch_f) else new_f
    keep = front_ranks(f) == 0
    g, f = g[keep], f[keep]
    # one entry per objective vector (the earliest genome wins)
    _, first = np.unique(f, axis=0, return_index=True)
    first = np.sort(first)
    return g[first], f[first]


def nsga2_run(problem: ScheduleProblem, config: NsgaConfig, rng: np.random.Generator, *,
              baseline: UsageSchedule | None = None) -> NsgaResult:
    """Generational NSGA-II with an external archive of every non-dominated point seen.

    With ``baseline`` set, the first individual is the baseline schedule so
    the search starts from the current operating point.
    """
    space = problem.space
    n, p = config.population, space.length
    p_mut = config.p_mutation if config.p_mutation is not None else 1.0 / p
    pop = space.repair(rng.random((n, p)))
    if config.seed_baseline and baseline is not None:
        pop[0] = space.encode(baseline)
    objs = problem.evaluate(pop)
    evaluated = [objs]
    arch_g, arch_f = _update_archive(np.zeros((0, p)), np.zeros((0, 2)), pop, objs)
    reference = tuple(float(v) for v in objs.max(axis=0) * 1.1 + 1e-9)
    hv = [hypervolume_2d(arch_f, reference)]
    history = [{"generation": 0, "hypervolume": hv[0], "archive": len(arch_f)}]

    for gen in range(1, config.generations + 1):
        ranks, crowd = _ranks_and_crowding(objs)
        parents = _tournament(rng, ranks, crowd, n)
        children = np.empty((n, p))
        for k in range(0, n, 2):
            c1, c2 = sbx(pop[parents[k]], pop[parents[k + 1]], config.eta_crossover, rng, config.p_crossover)
            children[k] = polynomial_mutation(c1, config.eta_mutation, p_mut, rng)
            children[k + 1] = polynomial_mutation(c2, config.eta_mutation, p_mut, rng)
        children = space.repair(children)
        child_objs = problem.evaluate(children)
        evaluated.append(child_objs)
        arch_g, arch_f = _update_archive(arch_g, arch_f, children, child_objs)
        all_g = np.vstack([pop, children])
        all_f = np.vstack([objs, child_objs])
        keep = _environmental_selection(all_f, n)
        pop, objs = all_g[keep], all_f[keep]
        hv.append(hypervolume_2d(arch_f, reference))
        history.append({"generation": gen, "hypervolume": hv[-1], "archive": len(arch_f)})
        if gen % 20 == 0:
            log.info("generation %d: archive %d, hypervolume %.6g", gen, len(arch_f), hv[-1])

    order = np.lexsort((arch_f[:, 0], arch_f[:, 1]))
    front = [ParetoPoint(float(arch_f[i, 0]), float(arch_f[i, 1]), arch_g[i].copy()) for i in order]
    return NsgaResult(front, hv, reference, np.vstack(evaluated), pop, objs, history)


def replay_check(front: Sequence[ParetoPoint], evaluated: np.ndarray) -> bool:
    """True when no front member is dominated by another member or by any evaluated vector."""
    pts = np.array([[p.comf, p.q_mean] for p in front])
    for a in pts:
        le = np.all(evaluated <= a, axis=1)
        lt = np.any(evaluated < a, axis=1)
        if np.any(le & lt):
            return False
    return True


# ---------------------------------------------------------------------------
# selection and gain


@dataclass(frozen=True)
class Selection:
    point: ParetoPoint
    qualified: bool  # False: nothing met the comfort bound, the most comfortable point was taken


def select_equivalent_comfort(front: Sequence[ParetoPoint], baseline_comf: float, relax: float = 0.0) -> Selection:
    """Lowest-consumption member with ``comf <= baseline_comf + relax``."""
    if not front:
        raise DomainError("empty Pareto front")
    ok = [p for p in front if p.comf <= baseline_comf + relax]
    if ok:
        return Selection(min(ok, key=lambda p: (p.q_mean, p.comf)), True)
    return Selection(min(front, key=lambda p: (p.comf, p.q_mean)), False)


@dataclass(frozen=True)
class Gain:
    percent: float
    monthly_mwh: float | None


def relative_gain(baseline_q: float, optimized_q: float, monthly_consumption_mwh: float | None = None) -> Gain:
    """Relative consumption reduction in percent, optionally applied to a monthly total (MWh)."""
    if baseline_q == 0:
        raise DomainError("baseline consumption is zero")
    pct = 100.0 * (baseline_q - optimized_q) / baseline_q
    mwh = None if monthly_consumption_mwh is None else pct / 100.0 * monthly_consumption_mwh
    return Gain(pct, mwh)


# ---------------------------------------------------------------------------
# artifacts


def write_pareto(front: Sequence[ParetoPoint], space: ScheduleSpace, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["comf", "q_mean"] + space.column_names())
        for p in front:
            vals = space.values(p.genome)[0].ravel()
            w.writerow([repr(p.comf), repr(p.q_mean)] + [repr(float(v)) for v in vals])


def write_series(path: str | Path, occupied, **series) -> None:
    names = list(series)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour", "occupied"] + names)
        for k in range(len(occupied)):
            w.writerow([k, int(occupied[k])] + [repr(float(series[n][k])) for n in names])


def write_history(history: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generation", "hypervolume", "archive"])
        for h in history:
            w.writerow([h["generation"], repr(float(h["hypervolume"])), h["archive"]])


def write_json(path: str | Path, doc: dict) -> None:
    Path(path).write_text(json.dumps(dict(doc, schema_version=SCHEMA_VERSION), indent=1, sort_keys=True) + "\n")
