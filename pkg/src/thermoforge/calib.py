"""CMA-ES and the building-parameter calibration driver.

The optimiser is a plain (mu/mu_w, lambda) CMA-ES with cumulative step-size
adaptation and rank-one plus rank-mu covariance updates, using the usual
default strategy constants. Selection only looks at fitness ranks, so any
monotone transform of the objective leaves the search path unchanged.

Calibration searches the unit cube: each building parameter is mapped
linearly from its range to [0, 1]. Candidates outside the cube are clipped
before evaluation and pay the squared clip distance as a penalty.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .domain import (
    THETA_FIELDS,
    BuildingParams,
    Episode,
    ParamRange,
    RangeSet,
)
from .errors import ArtifactError, DomainError, OracleError
from .metrics import EvalReport, calibration_cost
from .predictors import Predictor
from .refsim import simulate

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MAX_CONDITION = 1e14
# fixed per building from its floor area, never searched
FIXED_THETA = ("n_occupants", "n_pcs")


# ---------------------------------------------------------------------------
# CMA-ES


@dataclass(frozen=True)
class CmaesState:
    mean: np.ndarray
    sigma: float
    cov: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    basis: np.ndarray  # eigenvectors of cov
    scales: np.ndarray  # sqrt of eigenvalues
    generation: int
    lam: int
    mu: int
    weights: np.ndarray
    mu_eff: float
    c_sigma: float
    d_sigma: float
    c_c: float
    c_1: float
    c_mu: float
    chi_n: float

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def condition(self) -> float:
        return float((self.scales.max() / self.scales.min()) ** 2)


def default_popsize(n: int) -> int:
    return 4 + int(math.floor(3 * math.log(n)))


def cmaes_init(mean, sigma: float, popsize: int | None = None) -> CmaesState:
    mean = np.array(mean, dtype=float).ravel()
    n = mean.size
    if n < 1:
        raise DomainError("CMA-ES needs at least one dimension")
    if not sigma > 0:
        raise DomainError("sigma must be > 0")
    lam = popsize or default_popsize(n)
    if lam < 2:
        raise DomainError("population size must be >= 2")
    mu = lam // 2
    w = math.log((lam + 1) / 2) - np.log(np.arange(1, mu + 1))
    w = w / w.sum()
    mu_eff = 1.0 / float(np.sum(w**2))
    c_sigma = (mu_eff + 2) / (n + mu_eff + 5)
    d_sigma = 1 + 2 * max(0.0, math.sqrt((mu_eff - 1) / (n + 1)) - 1) + c_sigma
    c_c = (4 + mu_eff / n) / (n + 4 + 2 * mu_eff / n)
    c_1 = 2 / ((n + 1.3) ** 2 + mu_eff)
    c_mu = min(1 - c_1, 2 * (mu_eff - 2 + 1 / mu_eff) / ((n + 2) ** 2 + mu_eff))
    chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
    return CmaesState(
        mean=mean, sigma=float(sigma), cov=np.eye(n), p_sigma=np.zeros(n), p_c=np.zeros(n),
        basis=np.eye(n), scales=np.ones(n), generation=0, lam=lam, mu=mu, weights=w, mu_eff=mu_eff,
        c_sigma=c_sigma, d_sigma=d_sigma, c_c=c_c, c_1=c_1, c_mu=c_mu, chi_n=chi_n,
    )


def cmaes_ask(state: CmaesState, rng: np.random.Generator) -> np.ndarray:
    """Sample ``lam`` candidates, shape (lam, n)."""
    z = rng.standard_normal((state.lam, state.dim))
    y = (z * state.scales) @ state.basis.T
    return state.mean + state.sigma * y


def _decompose(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    if not np.all(np.isfinite(vals)):
        raise DomainError("covariance has non-finite eigenvalues")
    top = vals.max()
    if top <= 0:
        raise DomainError("covariance is not positive definite and cannot be repaired")
    floor = top / MAX_CONDITION
    if vals.min() < floor:
        # eigen-clamp: lift the small end of the spectrum to the conditioning limit
        vals = np.maximum(vals, floor)
        cov = (vecs * vals) @ vecs.T
        cov = 0.5 * (cov + cov.T)
    return cov, vecs, np.sqrt(vals)


def cmaes_tell(state: CmaesState, candidates: np.ndarray, fitnesses) -> CmaesState:
    """Update the distribution from evaluated candidates (lower fitness is better)."""
    x = np.asarray(candidates, dtype=float)
    f = np.asarray(fitnesses, dtype=float)
    if x.shape != (state.lam, state.dim) or f.shape != (state.lam,):
        raise DomainError(f"expected {state.lam} candidates of dimension {state.dim}")
    if not np.all(np.isfinite(f)):
        raise DomainError("fitness values must be finite")
    n, g = state.dim, state.generation + 1
    order = np.argsort(f, kind="stable")[: state.mu]
    y = (x[order] - state.mean) / state.sigma
    y_w = state.weights @ y
    mean = state.mean + state.sigma * y_w

    inv_sqrt = (state.basis / state.scales) @ state.basis.T
    cs = state.c_sigma
    p_sigma = (1 - cs) * state.p_sigma + math.sqrt(cs * (2 - cs) * state.mu_eff) * (inv_sqrt @ y_w)
    ps_norm = float(np.linalg.norm(p_sigma))
    h_sigma = ps_norm / math.sqrt(1 - (1 - cs) ** (2 * g)) < (1.4 + 2 / (n + 1)) * state.chi_n
    cc = state.c_c
    p_c = (1 - cc) * state.p_c + (math.sqrt(cc * (2 - cc) * state.mu_eff) * y_w if h_sigma else 0.0)

    c1, cmu = state.c_1, state.c_mu
    delta = 0.0 if h_sigma else cc * (2 - cc)
    rank_mu = (y.T * state.weights) @ y
    cov = (1 + c1 * delta - c1 - cmu) * state.cov + c1 * np.outer(p_c, p_c) + cmu * rank_mu
    sigma = state.sigma * math.exp((cs / state.d_sigma) * (ps_norm / state.chi_n - 1))
    if not (math.isfinite(sigma) and sigma > 0):
        raise DomainError(f"step size degenerated to {sigma}")
    cov, basis, scales = _decompose(cov)
    return replace(state, mean=mean, sigma=sigma, cov=cov, p_sigma=p_sigma, p_c=p_c,
                   basis=basis, scales=scales, generation=g)


@dataclass
class CmaesResult:
    x_best: np.ndarray
    f_best: float
    evaluations: int
    trace: list[dict]
    state: CmaesState
    stop: str


def fmin(objective: Callable[[np.ndarray], np.ndarray], x0, sigma0: float, rng: np.random.Generator, *,
         popsize: int | None = None, max_evals: int | None = None, max_iter: int | None = None,
         f_target: float | None = None, max_seconds: float | None = None,
         transform: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None) -> CmaesResult:
    """Minimise a batch objective (``objective(X) -> f`` for X of shape (lam, n)).

    ``transform`` maps raw candidates to (evaluated points, penalties); the
    penalty is added to the fitness and the evaluated point is what gets
    recorded as best.
    """
    if max_evals is None and max_iter is None and max_seconds is None:
        raise DomainError("fmin needs an evaluation, iteration or time budget")
    state = cmaes_init(x0, sigma0, popsize)
    best_x, best_f, evals = None, math.inf, 0
    trace: list[dict] = []
    t0 = time.perf_counter()
    stop = ""
    while True:
        if max_iter is not None and state.generation >= max_iter:
            stop = "max_iter"
            break
        if max_evals is not None and evals + state.lam > max_evals:
            stop = "max_evals"
            break
        if max_seconds is not None and time.perf_counter() - t0 > max_seconds:
            stop = "max_seconds"
            break
        raw = cmaes_ask(state, rng)
        points, penalty = transform(raw) if transform is not None else (raw, np.zeros(len(raw)))
        values = np.asarray(objective(points), dtype=float)
        if values.shape != (len(raw),) or not np.all(np.isfinite(values)):
            raise DomainError("objective must return one finite value per candidate")
        fit = values + penalty
        evals += len(raw)
        i = int(np.argmin(fit))
        if fit[i] < best_f:
            best_f, best_x = float(fit[i]), points[i].copy()
        state = cmaes_tell(state, raw, fit)
        trace.append({"iteration": state.generation, "evaluations": evals, "best_cost": best_f,
                      "generation_best": float(fit[i]), "sigma": state.sigma})
        if f_target is not None and best_f <= f_target:
            stop = "f_target"
            break
    return CmaesResult(best_x, best_f, evals, trace, state, stop)


# ---------------------------------------------------------------------------
# search space


@dataclass(frozen=True)
class SearchSpace:
    """Building parameters searched by calibration, each mapped linearly onto [0, 1]."""

    variables: tuple[ParamRange, ...]

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if not names or len(set(names)) != len(names):
            raise DomainError("search space needs distinct, non-empty variables")
        unknown = set(names) - set(THETA_FIELDS)
        if unknown:
            raise DomainError(f"not building parameters: {sorted(unknown)}")

    @classmethod
    def default(cls, ranges: RangeSet) -> "SearchSpace":
        return cls(tuple(ranges.theta[n] for n in THETA_FIELDS if n not in FIXED_THETA))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    @property
    def dim(self) -> int:
        return len(self.variables)

    def _lo_span(self):
        lo = np.array([v.min for v in self.variables])
        span = np.array([v.span for v in self.variables])
        return lo, span

    def encode(self, values) -> np.ndarray:
        lo, span = self._lo_span()
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (np.asarray(values, dtype=float) - lo) / safe, 0.0)

    def decode(self, u) -> np.ndarray:
        lo, span = self._lo_span()
        return lo + np.asarray(u, dtype=float) * span

    def snap(self, values) -> np.ndarray:
        """Nearest grid value per variable."""
        v = np.asarray(values, dtype=float)
        out = np.empty_like(v)
        for i, r in enumerate(self.variables):
            k = np.clip(np.round((v[..., i] - r.min) / r.step), 0, r.n_points - 1)
            out[..., i] = np.round(r.min + k * r.step, 10)
        return out

    @staticmethod
    def clip(u) -> tuple[np.ndarray, np.ndarray]:
        """Clip encoded candidates into the unit cube; penalty = squared clip distance."""
        u = np.asarray(u, dtype=float)
        c = np.clip(u, 0.0, 1.0)
        return c, np.sum((u - c) ** 2, axis=-1)

    def apply(self, u, base: BuildingParams) -> BuildingParams:
        values = self.decode(u)
        return base.with_theta(**{n: float(x) for n, x in zip(self.names, values)})

    def to_dict(self) -> dict:
        return {v.name: {"min": v.min, "max": v.max, "step": v.step, "unit": v.unit} for v in self.variables}


# ---------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class CalibBudget:
    max_iter: int = 300
    max_seconds: float | None = None
    cost_ceiling: float | None = None
    popsize: int | None = None
    sigma0: float = 0.3
    restart: bool = False

    def __post_init__(self):
        if self.max_iter < 1:
            raise DomainError("max_iter must be >= 1")
        if not self.sigma0 > 0:
            raise DomainError("sigma0 must be > 0")


@dataclass
class CalibrationResult:
    theta_hat: BuildingParams
    encoded: np.ndarray
    cost: float
    report: EvalReport
    trace: list[dict]
    converged: bool
    evaluations: int
    stop: str
    names: tuple[str, ...] = ()
    restarted: bool = False


def observed_series(episodes: Sequence[Episode]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Concatenated observed (T, total Q, occupied) over all episodes."""
    t = np.concatenate([e.t_int for e in episodes])
    q = np.concatenate([e.q_total for e in episodes])
    occ = np.concatenate([e.occupied for e in episodes])
    return t, q, occ


def predict_series(predictor: Predictor, candidates: Sequence[BuildingParams],
                   episodes: Sequence[Episode]) -> tuple[np.ndarray, np.ndarray]:
    """Predicted (T, total Q), each (n_candidates, total hours), with each episode's own schedule and weather."""
    ts, qs = [], []
    for e in episodes:
        t, q = predictor.predict(candidates, [e.usage], e.occupancy, e.weather, anchor=e.anchor)
        ts.append(t)
        qs.append(q)
    return np.concatenate(ts, axis=1), np.concatenate(qs, axis=1)


def candidate_costs(predictor: Predictor, candidates: Sequence[BuildingParams], episodes: Sequence[Episode]) -> np.ndarray:
    t_obs, q_obs, _ = observed_series(episodes)
    t_hat, q_hat = predict_series(predictor, candidates, episodes)
    if not (np.all(np.isfinite(t_hat)) and np.all(np.isfinite(q_hat))):
        raise DomainError("non-finite prediction during calibration")
    return np.array([calibration_cost(t_obs, t_hat[i], q_obs, q_hat[i]) for i in range(len(candidates))])


def cost_of(theta: BuildingParams, predictor: Predictor, episodes: Sequence[Episode]) -> float:
    """Calibration cost ``1 - (R2_T + R2_Q) / 2`` of one building on the observed weeks."""
    return float(candidate_costs(predictor, [theta], episodes)[0])


def _check_episodes(episodes: Sequence[Episode], min_hours: int) -> None:
    if not episodes:
        raise DomainError("no observed episodes")
    hours = sum(e.horizon for e in episodes)
    if hours < min_hours:
        raise DomainError(f"observed data covers {hours} h; at least {min_hours} h (two weeks) required")


def series_report(predictor: Predictor, theta: BuildingParams, episodes: Sequence[Episode], spans=(1.0, 1.0)) -> EvalReport:
    t_obs, q_obs, occ = observed_series(episodes)
    t_hat, q_hat = predict_series(predictor, [theta], episodes)
    return EvalReport.from_series(t_obs, t_hat[0], q_obs, q_hat[0], occ, *spans)


def scaling_spans(predictor) -> tuple[float, float]:
    """Min-max spans of T and total Q used by a metamodel, or (1, 1) without one."""
    norm = getattr(predictor, "norm", None)
    if norm is None:
        return 1.0, 1.0
    lo_t, hi_t = norm.bounds["T_INT_OFFICE"]
    lo_q, hi_q = norm.bounds["Q_TOTAL"] if "Q_TOTAL" in norm.bounds else (0.0, 1.0)
    return hi_t - lo_t, hi_q - lo_q


def calibrate(observed: Sequence[Episode], predictor: Predictor, space: SearchSpace, base: BuildingParams,
              budget: CalibBudget = CalibBudget(), rng: np.random.Generator | None = None,
              *, min_hours: int = 336) -> CalibrationResult:
    """Estimate the building parameters in ``space`` from observed episodes.

    ``base`` supplies everything not searched (geometry, occupant and PC
    counts). The search starts at the centre of the cube with step 0.3.
    """
    _check_episodes(observed, min_hours)
    rng = rng if rng is not None else np.random.default_rng(0)
    t_obs, q_obs, _ = observed_series(observed)
    if np.ptp(t_obs) == 0 or np.ptp(q_obs) == 0:
        raise DomainError("observed T and Q must vary for R^2 to be defined")

    def objective(points):
        return candidate_costs(predictor, [space.apply(u, base) for u in points], observed)

    def run(popsize):
        return fmin(objective, np.full(space.dim, 0.5), budget.sigma0, rng, popsize=popsize,
                    max_iter=budget.max_iter, max_seconds=budget.max_seconds, transform=space.clip)

    res = run(budget.popsize)
    converged = budget.cost_ceiling is None or res.f_best <= budget.cost_ceiling
    restarted = False
    if not converged and budget.restart:
        log.info("calibration not converged (cost %.4g); restarting with doubled population", res.f_best)
        lam = 2 * (budget.popsize or default_popsize(space.dim))
        second = run(lam)
        offset = res.trace[-1]["evaluations"] if res.trace else 0
        for row in second.trace:
            row = dict(row, iteration=row["iteration"] + len(res.trace), evaluations=row["evaluations"] + offset,
                       best_cost=min(row["best_cost"], res.f_best))
            res.trace.append(row)
        if second.f_best < res.f_best:
            res.x_best, res.f_best = second.x_best, second.f_best
        res.evaluations += second.evaluations
        res.stop = second.stop
        restarted = True
        converged = res.f_best <= budget.cost_ceiling

    theta_hat = space.apply(res.x_best, base)
    report = series_report(predictor, theta_hat, observed, scaling_spans(predictor))
    return CalibrationResult(theta_hat, res.x_best, res.f_best, report, res.trace, converged,
                             res.evaluations, res.stop, space.names, restarted)


def _overlaps(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] < b[1] and b[0] < a[1]


def validate(theta_hat: BuildingParams, predictor: Predictor, fresh: Sequence[Episode], *,
             calibration_windows: Sequence[tuple[int, int]] | None = None) -> EvalReport:
    """Report for ``theta_hat`` on held-out weeks.

    When ``calibration_windows`` (absolute ``[start, end)`` hours) are given,
    any overlap with the fresh episodes is rejected.
    """
    if not fresh:
        raise DomainError("no validation episodes")
    if calibration_windows:
        for e in fresh:
            for w in calibration_windows:
                if _overlaps(e.window, tuple(w)):
                    raise DomainError(f"validation window {e.window} overlaps calibration window {tuple(w)}")
    return series_report(predictor, theta_hat, fresh, scaling_spans(predictor))


def synthetic_observations(theta_star: BuildingParams, usage, occupancy, weather, oracle_cfg, *,
                           start: int = 0, calib_hours: int = 336, valid_hours: int = 336) -> tuple[Episode, Episode]:
    """Oracle runs for a calibration window and the fortnight right after it.

    Each window is simulated as its own episode (starting from the heating
    setpoint), matching how training episodes are generated.
    """
    if start % (7 * 24) or calib_hours % (7 * 24):
        raise DomainError("observation windows must start on week boundaries")
    if start + calib_hours + valid_hours > len(weather):
        raise DomainError("weather record too short for calibration plus validation windows")
    try:
        calib = simulate(theta_star, usage, occupancy, weather.window(start, calib_hours), oracle_cfg, start_hour=start)
        valid = simulate(theta_star, usage, occupancy, weather.window(start + calib_hours, valid_hours), oracle_cfg,
                         start_hour=start + calib_hours)
    except OracleError as exc:
        raise OracleError(f"oracle failed for hidden building {theta_star.theta_dict()}: {exc}") from exc
    return calib, valid


# ---------------------------------------------------------------------------
# run-directory artifacts


def write_trace(trace: Sequence[dict], path: str | Path) -> None:
    cols = ["iteration", "evaluations", "best_cost", "generation_best", "sigma"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in trace:
            w.writerow([row[c] if isinstance(row[c], int) else repr(float(row[c])) for c in cols])


def write_calibration(result: CalibrationResult, out_dir: str | Path, *, validation: EvalReport | None = None) -> list[Path]:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    theta_doc = {
        "schema_version": SCHEMA_VERSION,
        "params": result.theta_hat.to_dict(),
        "searched": list(result.names),
        "encoded": [float(x) for x in result.encoded],
        "cost": result.cost,
    }
    report_doc = {
        "schema_version": SCHEMA_VERSION,
        "calibration": result.report.to_dict(),
        "validation": validation.to_dict() if validation is not None else None,
        "converged": result.converged,
        "restarted": result.restarted,
        "evaluations": result.evaluations,
        "iterations": len(result.trace),
        "stop": result.stop,
        "guideline_q": result.report.guideline_q,
    }
    paths = [d / "theta_hat.json", d / "report.json", d / "trace.csv"]
    paths[0].write_text(json.dumps(theta_doc, indent=1, sort_keys=True) + "\n")
    paths[1].write_text(json.dumps(report_doc, indent=1, sort_keys=True) + "\n")
    write_trace(result.trace, paths[2])
    return paths


def load_theta_hat(path: str | Path) -> BuildingParams:
    p = Path(path)
    if not p.exists():
        raise ArtifactError(f"missing calibration artifact {p}")
    doc = json.loads(p.read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DomainError(f"unsupported theta_hat schema {doc.get('schema_version')}")
    return BuildingParams.from_dict(doc["params"])
