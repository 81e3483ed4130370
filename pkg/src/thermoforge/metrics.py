"""Evaluation formulas for training and calibration.

Conventions: ``mbe`` and ``cv_rmse`` return percentages; a positive MBE
means the model under-predicts. RMSE divides by the sample count M.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import DomainError

SCHEMA_VERSION = 1
CV_RMSE_LIMIT = 20.0
MBE_LIMIT = 5.0


def _pair(pred, truth):
    p = np.asarray(pred, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape:
        raise DomainError(f"shape mismatch: pred {p.shape} vs truth {t.shape}")
    if p.size == 0:
        raise DomainError("empty series")
    return p, t


def mse(pred, truth, mask=None) -> float:
    """Mean squared error, optionally restricted to hours where ``mask`` is nonzero.

    ``mask`` broadcasts against the leading axes, so a (T,) occupancy mask
    works for (T, channels) arrays.
    """
    p, t = _pair(pred, truth)
    sq = (p - t) ** 2
    if mask is None:
        return float(np.mean(sq))
    m = np.asarray(mask, dtype=bool)
    if m.shape != sq.shape[: m.ndim]:
        raise DomainError(f"mask shape {m.shape} does not match series {sq.shape}")
    if not m.any():
        raise DomainError("mask selects no hours")
    return float(np.mean(sq[m]))


def delta_q_tot(pred_q, truth_q) -> float:
    """Absolute relative error of the cumulative consumption."""
    p, t = _pair(pred_q, truth_q)
    total = float(np.sum(t))
    if total <= 0.0:
        raise DomainError("cumulative truth consumption must be > 0")
    return abs(float(np.sum(p)) - total) / total


def mbe(truth, pred) -> float:
    """Mean bias error in percent: ``100 * sum(z - z_hat) / sum(z)``."""
    p, z = _pair(pred, truth)
    denom = float(np.sum(z))
    if denom == 0.0:
        raise DomainError("MBE undefined: truth sums to zero")
    return 100.0 * float(np.sum(z - p)) / denom


def rmse(truth, pred) -> float:
    p, z = _pair(pred, truth)
    return math.sqrt(float(np.mean((z - p) ** 2)))


def cv_rmse(truth, pred) -> float:
    """RMSE over the truth mean, in percent."""
    p, z = _pair(pred, truth)
    zbar = float(np.mean(z))
    if zbar == 0.0:
        raise DomainError("Cv(RMSE) undefined: truth mean is zero")
    return 100.0 * rmse(z, p) / zbar


def r2(truth, pred) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``."""
    p, z = _pair(pred, truth)
    ss_tot = float(np.sum((z - z.mean()) ** 2))
    if ss_tot == 0.0:
        raise DomainError("R^2 undefined for a constant truth series")
    return 1.0 - float(np.sum((z - p) ** 2)) / ss_tot


def within_guideline(cv: float, bias: float, *, cv_limit: float = CV_RMSE_LIMIT, mbe_limit: float = MBE_LIMIT) -> bool:
    """Hourly calibration guideline: Cv(RMSE) within 20% and |MBE| within 5%."""
    return abs(cv) <= cv_limit and abs(bias) <= mbe_limit


def calibration_cost(t_truth, t_pred, q_truth, q_pred) -> float:
    """``1 - (R2_T + R2_Q) / 2``; zero for a perfect fit."""
    return 1.0 - 0.5 * (r2(t_truth, t_pred) + r2(q_truth, q_pred))


@dataclass(frozen=True)
class EvalReport:
    mse_t: float
    mse_q: float
    mse_t_occ: float
    mse_q_occ: float
    delta_q_tot: float
    mbe_q: float
    cv_rmse_q: float
    mbe_t: float
    cv_rmse_t: float
    r2_t: float
    r2_q: float

    # printed column headers, in field order
    LABELS = ("MSE_T", "MSE_Q", "MSE_T^occ", "MSE_Q^occ", "Delta_QTot", "MBE_Q(%)", "CvRMSE_Q(%)",
              "MBE_T(%)", "CvRMSE_T(%)", "R2_T", "R2_Q")

    def __post_init__(self):
        if self.cv_rmse_q < 0 or self.cv_rmse_t < 0:
            raise DomainError("Cv(RMSE) must be non-negative")
        if self.r2_t > 1 or self.r2_q > 1:
            raise DomainError("R^2 cannot exceed 1")

    @classmethod
    def compute(cls, pred_scaled, truth_scaled, t_pred, t_truth, q_pred, q_truth, occupied) -> "EvalReport":
        """Build a report from scaled multi-channel arrays (temperature in column 0)
        and physical temperature / total-consumption series.

        Inputs may carry a leading episode axis; physical series are flattened.
        """
        ps, ts = _pair(pred_scaled, truth_scaled)
        occ = np.asarray(occupied, dtype=bool)
        t_pred, t_truth, q_pred, q_truth = (np.ravel(np.asarray(a, dtype=float)) for a in (t_pred, t_truth, q_pred, q_truth))
        return cls(
            mse_t=mse(ps[..., 0], ts[..., 0]),
            mse_q=mse(ps[..., 1:], ts[..., 1:]),
            mse_t_occ=mse(ps[..., 0], ts[..., 0], occ),
            mse_q_occ=mse(ps[..., 1:], ts[..., 1:], occ),
            delta_q_tot=delta_q_tot(q_pred, q_truth),
            mbe_q=mbe(q_truth, q_pred),
            cv_rmse_q=cv_rmse(q_truth, q_pred),
            mbe_t=mbe(t_truth, t_pred),
            cv_rmse_t=cv_rmse(t_truth, t_pred),
            r2_t=r2(t_truth, t_pred),
            r2_q=r2(q_truth, q_pred),
        )

    @classmethod
    def from_series(cls, t_truth, t_pred, q_truth, q_pred, occupied,
                    t_span: float = 1.0, q_span: float = 1.0) -> "EvalReport":
        """Report for physical T / total-Q series only (calibration, validation).

        The MSE fields are taken on the series divided by ``t_span`` / ``q_span``
        (pass the min-max scaling spans to match training-scale numbers).
        """
        t_truth, t_pred, q_truth, q_pred = (np.ravel(np.asarray(a, dtype=float))
                                            for a in (t_truth, t_pred, q_truth, q_pred))
        occ = np.ravel(np.asarray(occupied, dtype=bool))
        return cls(
            mse_t=mse(t_pred / t_span, t_truth / t_span),
            mse_q=mse(q_pred / q_span, q_truth / q_span),
            mse_t_occ=mse(t_pred / t_span, t_truth / t_span, occ),
            mse_q_occ=mse(q_pred / q_span, q_truth / q_span, occ),
            delta_q_tot=delta_q_tot(q_pred, q_truth),
            mbe_q=mbe(q_truth, q_pred),
            cv_rmse_q=cv_rmse(q_truth, q_pred),
            mbe_t=mbe(t_truth, t_pred),
            cv_rmse_t=cv_rmse(t_truth, t_pred),
            r2_t=r2(t_truth, t_pred),
            r2_q=r2(q_truth, q_pred),
        )

    @property
    def guideline_q(self) -> bool:
        return within_guideline(self.cv_rmse_q, self.mbe_q)

    def to_dict(self) -> dict:
        return dict(asdict(self), schema_version=SCHEMA_VERSION)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        return cls(**{f.name: float(d[f.name]) for f in fields(cls)})

    def table(self) -> str:
        """Fixed-order two-line text table."""
        values = [getattr(self, f.name) for f in fields(self)]
        widths = [max(len(lab), 12) for lab in self.LABELS]
        head = "  ".join(lab.rjust(w) for lab, w in zip(self.LABELS, widths))
        row = "  ".join(f"{v:.4e}".rjust(w) for v, w in zip(values, widths))
        return head + "\n" + row
