"""Property-based checks of the invariants each module promises."""
import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from thermoforge.calib import fmin
from thermoforge.domain import (
    DEFAULT_RANGES,
    USAGE_FIELDS,
    USAGE_HOUR_PAIRS,
    OccupancySchedule,
    UsageSchedule,
    expand_inputs,
    midpoint_params,
    synthetic_weather,
)
from thermoforge.errors import DomainError
from thermoforge.metrics import cv_rmse, mbe, mse, r2
from thermoforge.moo import ScheduleSpace, crowding_distance, front_ranks
from thermoforge.nn import ModelLayout, analytic_gradient, init_weights, numerical_gradient, relative_error

from oracles import brute_force_crowding, brute_force_fronts

SPACE = ScheduleSpace(DEFAULT_RANGES)
unit = st.floats(0.0, 1.0, allow_nan=False)
genomes = arrays(np.float64, SPACE.length, elements=unit)
COL = {n: i for i, n in enumerate(USAGE_FIELDS)}
fast = settings(deadline=None, max_examples=60, suppress_health_check=[HealthCheck.function_scoped_fixture])


# ---------------------------------------------------------------------------
# schedules and features


@fast
@given(genomes)
def test_repaired_genomes_decode_to_valid_schedules(g):
    fixed = SPACE.repair(g)
    usage = SPACE.decode(fixed)  # the constructor enforces ordering and ranges
    assert isinstance(usage, UsageSchedule)
    np.testing.assert_array_equal(SPACE.repair(fixed), fixed)
    np.testing.assert_array_equal(SPACE.encode(usage), fixed)


@fast
@given(genomes, st.integers(0, 6), st.sampled_from(USAGE_HOUR_PAIRS))
def test_swapped_hours_rejected(g, day, pair):
    values = SPACE.decode(SPACE.repair(g)).values.copy()
    lo, hi = COL[pair[0]], COL[pair[1]]
    values[day, lo], values[day, hi] = values[day, hi], values[day, lo]
    with pytest.raises(DomainError):
        UsageSchedule(values)


@fast
@given(genomes, st.sampled_from(USAGE_FIELDS), st.floats(1.0, 50.0))
def test_out_of_range_values_rejected(g, name, excess):
    values = SPACE.decode(SPACE.repair(g)).values.copy()
    r = DEFAULT_RANGES.usage[name]
    values[:, COL[name]] = r.max + excess
    with pytest.raises(DomainError):
        UsageSchedule(values)


@pytest.fixture(scope="module")
def feature_env(geometry, normalizer):
    return midpoint_params(DEFAULT_RANGES, geometry), synthetic_weather(14, seed=5), normalizer


@fast
@given(genomes, st.integers(7, 9), st.integers(17, 19))
def test_features_in_unit_box_and_deterministic(feature_env, g, start, end):
    params, weather, norm = feature_env
    usage, occ = SPACE.decode(SPACE.repair(g)), OccupancySchedule.uniform(start, end)
    x = expand_inputs(params, usage, occ, weather, norm)
    assert x.shape == (336, 37)
    assert x.min() >= 0.0 and x.max() <= 1.0
    np.testing.assert_array_equal(x, expand_inputs(params, usage, occ, weather, norm))


@fast
@given(genomes, genomes, st.integers(0, 6))
def test_changing_one_weekday_touches_only_its_rows(feature_env, g1, g2, day):
    params, weather, norm = feature_env
    a = SPACE.decode(SPACE.repair(g1))
    other = SPACE.decode(SPACE.repair(g2))
    values = a.values.copy()
    values[day] = other.values[day]
    b = UsageSchedule(values)
    occ = OccupancySchedule.uniform(8, 18)
    xa, xb = expand_inputs(params, a, occ, weather, norm), expand_inputs(params, b, occ, weather, norm)
    changed = np.flatnonzero(np.any(xa != xb, axis=1))
    weekday = (np.arange(336) // 24) % 7
    assert np.all(weekday[changed] == day)


# ---------------------------------------------------------------------------
# metrics

series = arrays(np.float64, st.integers(3, 40), elements=st.floats(1.0, 100.0))


@fast
@given(series, st.data())
def test_mse_non_negative_and_zero_on_truth(z, data):
    zhat = data.draw(arrays(np.float64, z.shape, elements=st.floats(-100.0, 100.0)))
    assert mse(zhat, z) >= 0.0
    assert mse(z, z) == 0.0


@fast
@given(series, st.data(), st.sampled_from([0.25, 0.5, 2.0, 8.0, 1024.0]))
def test_cv_rmse_scale_invariant(z, data, a):
    zhat = data.draw(arrays(np.float64, z.shape, elements=st.floats(1.0, 100.0)))
    assert cv_rmse(a * z, a * zhat) == pytest.approx(cv_rmse(z, zhat), rel=1e-12, abs=1e-12)


@fast
@given(series, st.floats(0.01, 5.0))
def test_mbe_sign_symmetry(z, d):
    assert mbe(z, z + d) == pytest.approx(-mbe(z, z - d), rel=1e-9, abs=1e-12)


@fast
@given(series)
def test_r2_at_most_one(z):
    if np.ptp(z) == 0:
        return
    rng = np.random.default_rng(0)
    assert r2(z, z + rng.normal(size=z.shape)) <= 1.0


# ---------------------------------------------------------------------------
# optimisers

points = st.integers(1, 120).flatmap(
    lambda n: arrays(np.float64, (n, 2), elements=st.one_of(st.integers(0, 10).map(float), st.floats(0.0, 1.0))))


@fast
@given(points)
def test_fast_sort_matches_brute_force(pts):
    assert front_ranks(pts).tolist() == brute_force_fronts(pts)


@fast
@given(points)
def test_crowding_matches_brute_force(pts):
    np.testing.assert_allclose(crowding_distance(pts), brute_force_crowding(pts), rtol=1e-12)


def _sphere(x):
    return np.sum(x ** 2, axis=-1)


@settings(deadline=None, max_examples=25)
@given(st.integers(0, 2 ** 31), st.floats(-1e3, 1e3), st.sampled_from([0.5, 2.0, 64.0]))
def test_cmaes_invariant_to_monotone_affine_objective(seed, shift, scale):
    x0 = np.array([1.0, -0.5, 2.0])
    a = fmin(_sphere, x0, 0.5, np.random.default_rng(seed), max_iter=15)
    b = fmin(lambda x: scale * _sphere(x) + shift, x0, 0.5, np.random.default_rng(seed), max_iter=15)
    np.testing.assert_array_equal(a.state.mean, b.state.mean)
    assert a.state.sigma == b.state.sigma


@settings(deadline=None, max_examples=25)
@given(st.integers(0, 2 ** 31))
def test_cmaes_best_so_far_monotone(seed):
    res = fmin(_sphere, np.full(4, 2.0), 1.0, np.random.default_rng(seed), max_iter=25)
    best = [r["best_cost"] for r in res.trace]
    assert all(b <= a for a, b in zip(best, best[1:]))


# ---------------------------------------------------------------------------
# networks


@settings(deadline=None, max_examples=20)
@given(st.sampled_from(["lstm", "ffn"]), st.integers(1, 8), st.integers(1, 2), st.integers(1, 16),
       st.integers(0, 2 ** 31))
def test_gradient_check_random_nets(kind, d, layers, horizon, seed):
    layout = ModelLayout(kind, 4, d, layers, ("a", "b"))
    rng = np.random.default_rng(seed)
    w = init_weights(layout, rng)
    x, y = rng.uniform(size=(2, horizon, 4)), rng.uniform(size=(2, horizon, 2))
    analytic = analytic_gradient(w, x, y)
    numeric = numerical_gradient(w, x, y, step=1e-4)
    for name in w.params:
        err = relative_error(analytic[name], numeric[name])
        assert err < 1e-5, (name, err)
