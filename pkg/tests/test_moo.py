import csv
import json
import math

import numpy as np
import pytest

from thermoforge.domain import (
    DEFAULT_RANGES,
    USAGE_FIELDS,
    OccupancySchedule,
    USAGE_HOUR_PAIRS,
    USAGE_SETPOINT_PAIRS,
    UsageSchedule,
    midpoint_params,
    synthetic_weather,
)
from thermoforge.errors import DomainError
from thermoforge.moo import (
    NsgaConfig,
    ParetoPoint,
    ScheduleProblem,
    ScheduleSpace,
    comfort,
    crowding_distance,
    dominates,
    front_ranks,
    hypervolume_2d,
    mean_consumption,
    non_dominated_sort,
    nsga2_run,
    objectives,
    polynomial_mutation,
    relative_gain,
    replay_check,
    sbx,
    select_equivalent_comfort,
    write_history,
    write_json,
    write_pareto,
)
from thermoforge.predictors import OraclePredictor

from conftest import BASE_DAY
from oracles import brute_force_crowding, brute_force_fronts


# ---------------------------------------------------------------------------
# objectives


def test_comfort_zero_at_reference():
    assert comfort([22.5, 22.5], [1, 1]) == 0.0


def test_comfort_and_consumption_hand_values():
    assert comfort([23.5, 21.5, 40.0], [1, 1, 0], 22.5) == pytest.approx(1.0, abs=1e-12)
    assert mean_consumption([2.0, 4.0]) == 3.0
    assert objectives([23.5, 21.5], [2.0, 4.0], [1, 1]) == pytest.approx((1.0, 3.0))


def test_comfort_needs_occupied_hours():
    with pytest.raises(DomainError):
        comfort([20.0, 21.0], [0, 0])


# ---------------------------------------------------------------------------
# sorting and crowding


def test_fronts_hand_example():
    pts = np.array([[1, 2], [2, 1], [2, 2], [3, 3]], dtype=float)
    fronts = non_dominated_sort(pts)
    assert [sorted(f.tolist()) for f in fronts] == [[0, 1], [2], [3]]


def test_single_point():
    assert front_ranks(np.array([[1.0, 1.0]])).tolist() == [0]
    assert crowding_distance(np.array([[1.0, 1.0]]))[0] == math.inf


def test_duplicates_same_rank_zero_crowding():
    pts = np.array([[0.0, 3.0], [1.0, 2.0], [1.0, 2.0], [3.0, 0.0]])
    assert front_ranks(pts).tolist() == [0, 0, 0, 0]
    d = crowding_distance(pts)
    assert d[0] == d[3] == math.inf
    assert d[1] > 0 and d[2] == 0.0


def test_crowding_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 200))
        pts = rng.integers(0, 12, size=(n, 2)).astype(float)
        front = pts[front_ranks(pts) == 0]
        np.testing.assert_array_equal(crowding_distance(front), brute_force_crowding(front))
        # crowding on arbitrary sets (not just fronts) follows the same rule
        np.testing.assert_allclose(crowding_distance(pts), brute_force_crowding(pts), rtol=1e-12)


def test_sort_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(1, 200))
        pts = rng.integers(0, 20, size=(n, 2)).astype(float) if rng.random() < 0.5 else rng.random((n, 2))
        assert front_ranks(pts).tolist() == brute_force_fronts(pts)


def test_dominates():
    assert dominates([1, 1], [1, 2])
    assert not dominates([1, 1], [1, 1])
    assert not dominates([0, 2], [1, 1])


def test_hypervolume_hand_values():
    assert hypervolume_2d([[1.0, 1.0]], (2.0, 2.0)) == 1.0
    assert hypervolume_2d([[0.0, 1.0], [1.0, 0.0]], (2.0, 2.0)) == 3.0
    # dominated and out-of-box points add nothing
    assert hypervolume_2d([[0.0, 1.0], [1.0, 0.0], [1.5, 1.5], [3.0, 0.0]], (2.0, 2.0)) == 3.0
    assert hypervolume_2d(np.zeros((0, 2)), (1.0, 1.0)) == 0.0


def test_hypervolume_matches_grid_count():
    rng = np.random.default_rng(2)
    pts = rng.integers(0, 10, size=(15, 2)).astype(float)
    ref = (10.0, 10.0)
    cells = sum(1 for x in range(10) for y in range(10)
                if any(p[0] <= x and p[1] <= y for p in pts))
    assert hypervolume_2d(pts, ref) == cells


# ---------------------------------------------------------------------------
# selection and gain


def _pt(c, q):
    return ParetoPoint(c, q, np.zeros(84))


def test_equivalent_comfort_selection_hand_example():
    sel = select_equivalent_comfort([_pt(1.0, 10.0), _pt(0.5, 12.0)], 0.6, 0.0)
    assert (sel.point.comf, sel.point.q_mean) == (0.5, 12.0) and sel.qualified
    relaxed = select_equivalent_comfort([_pt(1.0, 10.0), _pt(0.5, 12.0)], 0.6, 0.5)
    assert relaxed.point.q_mean == 10.0


def test_selection_falls_back_to_most_comfortable():
    sel = select_equivalent_comfort([_pt(1.0, 10.0), _pt(0.8, 12.0)], 0.5)
    assert not sel.qualified and sel.point.comf == 0.8
    with pytest.raises(DomainError):
        select_equivalent_comfort([], 0.5)


def test_relative_gain():
    assert relative_gain(10.0, 10.0).percent == 0.0
    g = relative_gain(10.0, 9.0, 200.0)
    assert g.percent == pytest.approx(10.0) and g.monthly_mwh == pytest.approx(20.0)
    with pytest.raises(DomainError):
        relative_gain(0.0, 1.0)


# ---------------------------------------------------------------------------
# schedule encoding and operators


@pytest.fixture(scope="module")
def space():
    return ScheduleSpace(DEFAULT_RANGES)


def _ordered(values):
    col = {n: i for i, n in enumerate(USAGE_FIELDS)}
    ok_hours = all(np.all(values[:, col[a]] < values[:, col[b]]) for a, b in USAGE_HOUR_PAIRS)
    ok_set = all(np.all(values[:, col[a]] <= values[:, col[b]]) for a, b in USAGE_SETPOINT_PAIRS)
    return ok_hours and ok_set


def test_repair_yields_valid_schedules(space):
    rng = np.random.default_rng(0)
    genomes = space.repair(rng.random((300, 84)))
    for g in genomes:
        usage = space.decode(g)
        assert _ordered(usage.values)
        np.testing.assert_array_equal(space.repair(g), g)


def test_encode_decode_round_trip(space, usage):
    assert space.length == 84
    assert space.decode(space.encode(usage)) == usage
    assert len(space.column_names()) == 84


def test_encode_rejects_out_of_range(space):
    wide = UsageSchedule.uniform(dict(BASE_DAY, t_vent=30.0), ranges=None)
    with pytest.raises(DomainError):
        space.encode(wide)


def test_operators_stay_in_unit_box():
    rng = np.random.default_rng(3)
    for _ in range(200):
        a, b = rng.random(84), rng.random(84)
        c1, c2 = sbx(a, b, 15.0, rng)
        m = polynomial_mutation(c1, 20.0, 0.5, rng)
        for v in (c1, c2, m):
            assert v.min() >= 0.0 and v.max() <= 1.0


def test_sbx_without_crossover_copies_parents():
    rng = np.random.default_rng(0)
    a, b = rng.random(10), rng.random(10)
    c1, c2 = sbx(a, b, 15.0, rng, p_cross=0.0)
    np.testing.assert_array_equal(c1, a)
    np.testing.assert_array_equal(c2, b)


def test_nsga_config_validation():
    with pytest.raises(DomainError):
        NsgaConfig(population=7)


# ---------------------------------------------------------------------------
# small end-to-end run on the oracle


@pytest.fixture(scope="module")
def small_run(space, geometry, oracle_cfg):
    problem = ScheduleProblem(OraclePredictor(oracle_cfg), midpoint_params(DEFAULT_RANGES, geometry),
                              OccupancySchedule.uniform(8, 18), synthetic_weather(7, seed=1), space)
    baseline = UsageSchedule.uniform(BASE_DAY)
    res = nsga2_run(problem, NsgaConfig(population=12, generations=8), np.random.default_rng(0), baseline=baseline)
    return problem, baseline, res


def test_front_non_dominated_and_replay(small_run):
    _, _, res = small_run
    pts = np.array([[p.comf, p.q_mean] for p in res.front])
    assert all(not dominates(a, b) for a in pts for b in pts)
    assert replay_check(res.front, res.evaluated)
    assert len(res.evaluated) == 12 * 9


def test_hypervolume_non_decreasing(small_run):
    _, _, res = small_run
    assert all(b >= a for a, b in zip(res.hypervolume, res.hypervolume[1:]))


def test_baseline_is_seeded(small_run):
    problem, baseline, res = small_run
    base_obj = problem.evaluate_usages([baseline])[0]
    np.testing.assert_array_equal(res.evaluated[0], base_obj)
    # the archive dominates or contains the baseline
    assert any(p.comf <= base_obj[0] and p.q_mean <= base_obj[1] for p in res.front)


def test_front_schedules_reproduce_objectives(small_run, space):
    problem, _, res = small_run
    objs = problem.evaluate(np.array([p.genome for p in res.front]))
    np.testing.assert_array_equal(objs, [[p.comf, p.q_mean] for p in res.front])


def test_replay_check_detects_domination():
    front = [_pt(1.0, 1.0)]
    assert not replay_check(front, np.array([[0.5, 1.0]]))
    assert replay_check(front, np.array([[1.0, 1.0], [2.0, 0.5]]))


def test_writers(tmp_path, small_run, space):
    _, _, res = small_run
    write_pareto(res.front, space, tmp_path / "p.csv")
    with open(tmp_path / "p.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == len(res.front) + 1 and len(rows[0]) == 86
    write_history(res.history, tmp_path / "h.csv")
    write_json(tmp_path / "s.json", {"a": 1})
    assert json.loads((tmp_path / "s.json").read_text())["schema_version"] == 1
