import json

import numpy as np
import pytest

from thermoforge.errors import DomainError
from thermoforge.metrics import (
    EvalReport,
    calibration_cost,
    cv_rmse,
    delta_q_tot,
    mbe,
    mse,
    r2,
    rmse,
    within_guideline,
)

from oracles import ref_cv_rmse, ref_mbe, ref_r2

TOL = 1e-12


def test_mse_hand_values():
    assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mse([1.0, 1.0], [0.0, 0.0]) == 1.0
    assert abs(mse([21, 22, 23], [20, 22, 24], [1, 0, 1]) - 1.0) <= TOL


def test_mse_mask_broadcasts_over_channels():
    pred = np.array([[1.0, 1.0], [5.0, 5.0]])
    truth = np.zeros((2, 2))
    assert mse(pred, truth, [1, 0]) == 1.0
    with pytest.raises(DomainError):
        mse(pred, truth, [0, 0])
    with pytest.raises(DomainError):
        mse(pred, truth, [1, 0, 1])


def test_delta_q_tot_hand_values():
    assert abs(delta_q_tot([1, 2, 2.4], [1, 2, 3]) - 0.1) <= TOL
    assert delta_q_tot([1, 2, 3], [1, 2, 3]) == 0.0
    assert abs(delta_q_tot([2, 4, 6], [1, 2, 3]) - 1.0) <= TOL
    with pytest.raises(DomainError):
        delta_q_tot([1.0], [0.0])


def test_mbe_hand_values():
    assert abs(mbe([10] * 4, [9] * 4) - 10.0) <= TOL
    assert mbe([1, 2], [1, 2]) == 0.0
    assert abs(mbe([20, 22, 24], [21, 22, 23])) <= TOL


def test_mbe_sign_symmetry():
    z = np.array([4.0, 5.0, 6.0])
    assert mbe(z, z + 0.5) == pytest.approx(-mbe(z, z - 0.5), abs=TOL)


def test_cv_rmse_hand_values():
    assert abs(rmse([10, 10], [9, 11]) - 1.0) <= TOL
    assert abs(cv_rmse([10, 10], [9, 11]) - 10.0) <= TOL
    assert cv_rmse([3, 4], [3, 4]) == 0.0
    with pytest.raises(DomainError):
        cv_rmse([1, -1], [0, 0])


def test_r2_hand_values():
    z = [1.0, 2.0, 3.0]
    assert r2(z, z) == 1.0
    assert abs(r2(z, [2.0, 2.0, 2.0])) <= TOL
    assert abs(r2(z, [1, 2, 4]) - 0.5) <= TOL
    with pytest.raises(DomainError):
        r2([1, 1], [1, 2])


def test_metrics_agree_with_reference_formulas():
    rng = np.random.default_rng(0)
    for _ in range(50):
        z = rng.uniform(1, 10, size=30)
        zhat = z + rng.normal(size=30)
        assert abs(mbe(z, zhat) - ref_mbe(z, zhat)) <= 1e-10
        assert abs(cv_rmse(z, zhat) - ref_cv_rmse(z, zhat)) <= 1e-10
        assert abs(r2(z, zhat) - ref_r2(z, zhat)) <= 1e-12


def test_guideline():
    assert within_guideline(19.9, -4.9)
    assert not within_guideline(20.1, 0.0)
    assert not within_guideline(10.0, 5.1)


def test_calibration_cost():
    t = np.array([20.0, 21.0, 23.0])
    q = np.array([1.0, 5.0, 2.0])
    assert calibration_cost(t, t, q, q) == 0.0
    assert calibration_cost(t, np.full(3, t.mean()), q, np.full(3, q.mean())) == pytest.approx(1.0, abs=TOL)
    assert calibration_cost(t, np.full(3, 30.0), q, np.full(3, 0.0)) >= 1.0


def test_shape_and_empty_errors():
    with pytest.raises(DomainError):
        mse([1.0], [1.0, 2.0])
    with pytest.raises(DomainError):
        mse([], [])


def _report(n=48):
    rng = np.random.default_rng(1)
    truth_s = rng.uniform(size=(2, n, 8))
    pred_s = np.clip(truth_s + rng.normal(0, 0.01, truth_s.shape), 0, 1)
    t = 20 + 5 * rng.uniform(size=(2, n))
    q = 100 + 50 * rng.uniform(size=(2, n))
    occ = np.tile((np.arange(n) % 24 >= 8) & (np.arange(n) % 24 < 18), (2, 1))
    return EvalReport.compute(pred_s, truth_s, t + 0.1, t, q * 1.02, q, occ)


def test_report_perfect_prediction_zero():
    rng = np.random.default_rng(1)
    s = rng.uniform(size=(24, 8))
    t, q = 20 + rng.uniform(size=24), 1 + rng.uniform(size=24)
    occ = np.arange(24) >= 8
    rep = EvalReport.compute(s, s, t, t, q, q, occ)
    assert rep.mse_t == rep.mse_q == rep.mse_t_occ == rep.mse_q_occ == 0.0
    assert rep.delta_q_tot == rep.mbe_q == rep.cv_rmse_q == 0.0
    assert rep.r2_t == rep.r2_q == 1.0


def test_report_round_trip_and_table():
    rep = _report()
    doc = json.loads(rep.to_json())
    assert doc["schema_version"] == 1
    assert EvalReport.from_dict(doc) == rep
    head, row = rep.table().splitlines()
    assert head.split() == list(EvalReport.LABELS)
    assert len(row.split()) == len(EvalReport.LABELS)
    assert rep.mbe_q == pytest.approx(-2.0, abs=1e-9)


def test_report_from_series_spans():
    t = np.array([20.0, 22.0, 24.0, 21.0])
    q = np.array([1.0, 2.0, 3.0, 4.0])
    occ = np.array([1, 1, 0, 0])
    rep = EvalReport.from_series(t, t + 1, q, q, occ, t_span=2.0, q_span=1.0)
    assert rep.mse_t == pytest.approx(0.25, abs=TOL)
    assert rep.mse_q == 0.0
