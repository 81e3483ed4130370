"""Command-line entry point: ``thermoforge <subcommand> --config C --out D [--seed N] [--threads N]``.

Exit codes: 0 success, 1 unexpected failure, 2 config/schema error,
3 missing upstream artifact, 4 calibration did not converge.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
import zlib
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import numpy as np

from . import _jit
from .calib import (
    CalibBudget,
    SearchSpace,
    calibrate,
    load_theta_hat,
    synthetic_observations,
    validate,
    write_calibration,
)
from .config import RunConfig
from .domain import (
    BUILDINGS,
    DEFAULT_RANGES,
    OUTPUT_CHANNELS,
    REDUCED_OUTPUT_CHANNELS,
    BuildingParams,
    Episode,
    OccupancySchedule,
    RangeSet,
    UsageSchedule,
    WeatherSeries,
    consumption_total,
    derive_occupancy_defaults,
    midpoint_params,
    synthetic_weather,
)
from .errors import ArtifactError, ConfigError, DomainError, ThermoforgeError
from .metrics import EvalReport
from .moo import (
    NsgaConfig,
    ScheduleProblem,
    ScheduleSpace,
    nsga2_run,
    relative_gain,
    replay_check,
    select_equivalent_comfort,
    write_history,
    write_json,
    write_pareto,
    write_series,
)
from .nn import MetamodelWeights, TrainConfig, TrainingData, train
from .predictors import MetamodelPredictor, OraclePredictor
from .refsim import OracleConfig, simulate, simulate_batch
from .sampler import (
    build_dataset,
    default_normalizer,
    load_dataset,
    sample_configuration,
    save_dataset,
    scale_targets,
)

log = logging.getLogger("thermoforge")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ARTIFACT, EXIT_NOT_CONVERGED = 0, 1, 2, 3, 4
COMMANDS = ("sample", "train", "eval", "simulate", "calibrate", "optimize")


def stream_rng(seed: int, stream: str) -> np.random.Generator:
    """Independent counter-based generator per named stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, zlib.crc32(stream.encode())])))


def stream_seed(seed: int, stream: str) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(stream.encode())]).generate_state(1)[0])


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def package_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # running from a source tree
        return "0+unknown"


@dataclass
class Run:
    cfg: RunConfig
    seed: int
    out: Path
    inputs: dict  # label -> path

    def need(self, label: str, rel: str | None, marker: str | None = None) -> Path:
        path = self.cfg.resolve(rel)
        if path is None:
            raise ConfigError(f"paths.{label} must be set for this command")
        target = path / marker if marker else path
        if not target.exists():
            raise ArtifactError(f"missing upstream artifact {target}")
        self.inputs[label] = target
        return path

    # shared setup -----------------------------------------------------------
    @property
    def ranges(self) -> RangeSet:
        r = self.cfg.ranges
        if r is None:
            return DEFAULT_RANGES
        try:
            return RangeSet.from_table(r["theta"], r["usage"], r["occupancy"])
        except KeyError as exc:
            raise ConfigError(f"ranges: missing table {exc}") from exc

    @property
    def geometry(self):
        name = self.cfg.site.building
        if name not in BUILDINGS:
            raise ConfigError(f"site.building must be one of {sorted(BUILDINGS)}")
        return BUILDINGS[name]

    @property
    def oracle(self) -> OracleConfig:
        try:
            return OracleConfig(**self.cfg.oracle)
        except TypeError as exc:
            raise ConfigError(f"oracle: {exc}") from exc

    def weather(self) -> WeatherSeries:
        w = self.cfg.weather
        if w.csv is not None:
            path = self.cfg.resolve(w.csv)
            if not path.exists():
                raise ArtifactError(f"weather file {path} not found")
            self.inputs["weather"] = path
            return WeatherSeries.from_csv(path)
        return synthetic_weather(w.synthetic_days, seed=w.synthetic_seed)

    def normalizer(self):
        return default_normalizer(self.ranges, self.oracle, self.geometry)

    def usage(self) -> UsageSchedule:
        return UsageSchedule.uniform(self.cfg.site.usage, self.ranges)

    def occupancy(self) -> OccupancySchedule:
        start, end = self.cfg.site.occupancy
        return OccupancySchedule.uniform(float(start), float(end), self.ranges)

    def occupant_counts(self) -> dict:
        n_occ, n_pcs = derive_occupancy_defaults(self.geometry.total_floor_area)
        return {"n_occupants": float(n_occ), "n_pcs": float(n_pcs)}

    def theta_star(self) -> BuildingParams:
        given = self.cfg.site.theta_star
        if given is not None:
            theta = dict(self.occupant_counts(), **given)
            try:
                return BuildingParams.from_theta(theta, self.geometry)
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"site.theta_star: {exc}") from exc
        params, _, _ = sample_configuration(self.ranges, stream_rng(self.seed, "theta_star"), self.geometry,
                                            fixed=self.occupant_counts())
        return params

    def predictor(self, kind: str):
        if kind == "oracle":
            return OraclePredictor(self.oracle)
        path = self.need("weights", self.cfg.paths.weights)
        return MetamodelPredictor(MetamodelWeights.load(path))


# ---------------------------------------------------------------------------
# subcommands


def cmd_sample(run: Run) -> int:
    s = run.cfg.sample
    weather = run.weather()
    ds = build_dataset(s.n_examples, weather, run.ranges, s.split_fraction, stream_rng(run.seed, "sample"),
                       geometry=run.geometry, oracle=run.oracle, horizon=s.horizon)
    ds.meta["seed"] = run.seed
    save_dataset(ds, run.out / "dataset", weather)
    log.info("sampled %d episodes of %d h into %s", s.n_examples, s.horizon, run.out / "dataset")
    return EXIT_OK


def _channels(run: Run):
    return OUTPUT_CHANNELS if run.cfg.model.outputs == "full" else REDUCED_OUTPUT_CHANNELS


def cmd_train(run: Run) -> int:
    ds, _ = load_dataset(run.need("dataset", run.cfg.paths.dataset, "meta.json"))
    data = TrainingData.from_dataset(ds, run.normalizer(), _channels(run))
    t = run.cfg.train
    tc = TrainConfig(lr=t.lr, batch_size=t.batch_size, epochs=t.epochs, beta=t.beta, dropout=t.dropout,
                     seed=stream_seed(run.seed, "train"), adam_beta1=t.adam_beta1, adam_beta2=t.adam_beta2,
                     adam_eps=t.adam_eps, grad_clip=t.grad_clip)
    m = run.cfg.model
    res = train(data, tc, kind=m.kind, d_emb=m.d_emb, n_layers=m.n_layers)
    res.weights.save(run.out / "weights.json")
    with open(run.out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for h in res.history:
            w.writerow([h["epoch"], repr(h["train_loss"]), repr(h["val_loss"])])
    log.info("best epoch %d", res.best_epoch)
    return EXIT_OK


def evaluate_episodes(episodes, pred_outputs_scaled, truth_scaled, norm, channels) -> EvalReport:
    """Report for scaled predictions against scaled truth plus physical T / total Q."""
    ch = list(channels)
    t_col = ch.index("T_INT_OFFICE")
    if "Q_TOTAL" in ch:
        q_pred = norm.denormalize(pred_outputs_scaled[..., ch.index("Q_TOTAL")], "Q_TOTAL")
    else:
        q_pred = consumption_total(norm.denormalize_columns(pred_outputs_scaled.reshape(-1, len(ch)), ch), ch)
    q_true = np.concatenate([e.q_total for e in episodes])
    t_pred = norm.denormalize(pred_outputs_scaled[..., t_col], "T_INT_OFFICE")
    t_true = np.concatenate([e.t_int for e in episodes])
    occ = np.stack([e.occupied for e in episodes])
    return EvalReport.compute(pred_outputs_scaled, truth_scaled, t_pred, t_true, q_pred, q_true, occ)


def cmd_eval(run: Run) -> int:
    ds, _ = load_dataset(run.need("dataset", run.cfg.paths.dataset, "meta.json"))
    split = run.cfg.eval.split
    episodes = ds.episodes if split == "all" else ds.subset(split)
    if not episodes:
        raise DomainError(f"dataset has no '{split}' episodes")
    if run.cfg.eval.predictor == "oracle":
        norm, channels = run.normalizer(), OUTPUT_CHANNELS
        out = simulate_batch([e.params for e in episodes], [e.usage for e in episodes],
                             [e.occupancy for e in episodes], [e.weather for e in episodes], run.oracle)
        pred = np.stack([scale_targets(o, norm, channels) for o in out])
    else:
        weights = MetamodelWeights.load(run.need("weights", run.cfg.paths.weights))
        norm, channels = weights.normalizer, weights.layout.output_channels
        mm = MetamodelPredictor(weights)
        x = np.concatenate([mm.features([e.params], [e.usage], e.occupancy, e.weather, anchor=e.anchor)
                            for e in episodes])
        pred = mm.predict_scaled(x)
    truth = np.stack([scale_targets(e.outputs, norm, channels) for e in episodes])
    report = evaluate_episodes(episodes, pred, truth, norm, channels)
    (run.out / "report.json").write_text(report.to_json() + "\n")
    print(report.table())
    return EXIT_OK


def cmd_simulate(run: Run) -> int:
    s = run.cfg.simulate
    if s.source == "theta_hat":
        params = load_theta_hat(run.need("theta_hat", run.cfg.paths.theta_hat))
    else:
        params = run.theta_star()
    weather = run.weather()
    ep = simulate(params, run.usage(), run.occupancy(), weather.window(s.start_hour, s.hours), run.oracle,
                  start_hour=s.start_hour)
    ep.to_csv(run.out / "series.csv")
    write_json(run.out / "episode.json", ep.inputs_dict())
    return EXIT_OK


def _write_episode(ep: Episode, out: Path, stem: str):
    ep.to_csv(out / f"{stem}.csv")
    write_json(out / f"{stem}.json", ep.inputs_dict())


def cmd_calibrate(run: Run) -> int:
    c = run.cfg.calibrate
    weather = run.weather()
    theta_star = run.theta_star()
    observed, fresh = synthetic_observations(theta_star, run.usage(), run.occupancy(), weather, run.oracle,
                                             start=c.start_hour, calib_hours=c.calib_hours, valid_hours=c.valid_hours)
    predictor = run.predictor(c.predictor)
    base = midpoint_params(run.ranges, run.geometry, **run.occupant_counts())
    budget = CalibBudget(max_iter=c.max_iter, max_seconds=c.max_seconds, cost_ceiling=c.cost_ceiling,
                         popsize=c.popsize, sigma0=c.sigma0, restart=c.restart)
    result = calibrate([observed], predictor, SearchSpace.default(run.ranges), base, budget,
                       stream_rng(run.seed, "calibrate"))
    report_v = validate(result.theta_hat, predictor, [fresh], calibration_windows=[observed.window])
    write_calibration(result, run.out, validation=report_v)
    write_json(run.out / "theta_star.json", {"params": theta_star.to_dict()})
    _write_episode(observed, run.out, "observed_calibration")
    _write_episode(fresh, run.out, "observed_validation")
    print("calibration window\n" + result.report.table())
    print("validation window\n" + report_v.table())
    if not result.converged:
        log.error("calibration did not converge: cost %.4g above ceiling %s", result.cost, c.cost_ceiling)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_optimize(run: Run) -> int:
    o = run.cfg.optimize
    theta_hat = load_theta_hat(run.need("theta_hat", run.cfg.paths.theta_hat))
    predictor = run.predictor(o.predictor)
    weather = run.weather().window(o.start_hour, o.hours)
    space = ScheduleSpace(run.ranges)
    problem = ScheduleProblem(predictor, theta_hat, run.occupancy(), weather, space, t_ref=o.t_ref)
    baseline = run.usage()
    base_comf, base_q = problem.evaluate_usages([baseline])[0]
    nc = NsgaConfig(population=o.population, generations=o.generations, eta_crossover=o.eta_crossover,
                    eta_mutation=o.eta_mutation)
    res = nsga2_run(problem, nc, stream_rng(run.seed, "optimize"), baseline=baseline)

    write_pareto(res.front, space, run.out / "pareto.csv")
    write_history(res.history, run.out / "hypervolume.csv")
    selections, gains = [], []
    for relax in o.relax:
        sel = select_equivalent_comfort(res.front, base_comf, float(relax))
        gain = relative_gain(base_q, sel.point.q_mean, o.monthly_consumption_mwh)
        selections.append({"relax": float(relax), "comf": sel.point.comf, "q_mean": sel.point.q_mean,
                           "qualified": sel.qualified, "usage": sel.point.usage(space).to_dict()})
        gains.append({"relax": float(relax), "percent": gain.percent, "monthly_mwh": gain.monthly_mwh})
    write_json(run.out / "selected.json", {"baseline": {"comf": base_comf, "q_mean": base_q},
                                           "selected": selections,
                                           "front_size": len(res.front),
                                           "replay_check": replay_check(res.front, res.evaluated)})
    write_json(run.out / "gain.json", {"baseline_q_mean": base_q, "gains": gains})

    first = selections[0] if selections else None
    usages = [baseline] + ([UsageSchedule.from_dict(first["usage"], run.ranges)] if first else [])
    t, q = problem.series(usages)
    series = {"t_baseline": t[0], "q_baseline": q[0]}
    if first:
        series.update(t_selected=t[1], q_selected=q[1])
    write_series(run.out / "selected_series.csv", problem.occupied, **series)
    for g in gains:
        log.info("relax %.2f: gain %.2f%%", g["relax"], g["percent"])
    return EXIT_OK


HANDLERS = {
    "sample": cmd_sample,
    "train": cmd_train,
    "eval": cmd_eval,
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "optimize": cmd_optimize,
}


HELP = {
    "sample": "simulate a training dataset with the reference model",
    "train": "fit the metamodel on a sampled dataset",
    "eval": "print the metric table for a model on a dataset split",
    "simulate": "run the reference model for one building",
    "calibrate": "estimate building parameters from observed weeks",
    "optimize": "search usage schedules for lower consumption at equal comfort",
}


def write_manifest(run: Run, command: str, config_digest: str, seconds: float) -> Path:
    outputs = {}
    for p in sorted(run.out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            outputs[p.relative_to(run.out).as_posix()] = file_digest(p)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "seed": run.seed,
        "config_digest": config_digest,
        "inputs": {k: {"path": str(v), "sha256": file_digest(v)} for k, v in sorted(run.inputs.items())},
        "outputs": outputs,
        "wall_clock_seconds": seconds,
        "version": package_version(),
    }
    path = run.out / "manifest.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    path.chmod(0o444)
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thermoforge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", required=True, help="run directory to create")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None, help="cap worker threads")
    return parser


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    _jit.set_threads(n)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # BLAS threads stay at their default
        return
    threadpool_limits(n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        cfg, digest = RunConfig.load(args.config)
        seed = cfg.seed if args.seed is None else args.seed
        _set_threads(args.threads)
        out = Path(args.out)
        if (out / "manifest.json").exists():
            raise ConfigError(f"{out} already holds a finished run; choose a fresh --out directory")
        out.mkdir(parents=True, exist_ok=True)
        run = Run(cfg, seed, out, {"config": Path(args.config)})
        code = HANDLERS[args.command](run)
        write_manifest(run, args.command, digest, time.perf_counter() - t0)
        return code
    except ArtifactError as exc:
        log.error("%s", exc)
        return EXIT_ARTIFACT
    except (ConfigError, DomainError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except ThermoforgeError as exc:
        log.error("%s", exc)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
