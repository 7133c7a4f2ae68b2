"""Log-log regression helpers."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize


class FitError(ValueError):
    pass


@dataclass
class PowerFit:
    slope: float
    prefactor: float
    slope_stderr: float
    npoints: int
    dropped: int = 0

    def __call__(self, x):
        return self.prefactor * np.asarray(x, dtype=float) ** self.slope


def fit_power_law(x, y, stderr=None) -> PowerFit:
    """Weighted least squares of ``log y`` against ``log x``.

    Weights are ``(y / stderr)^2`` (the delta-method variance of ``log y``);
    unweighted without ``stderr``.  Nonpositive ``y`` are dropped with a
    warning; fewer than three remaining points is an error.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (y > 0) & np.isfinite(y) & (x > 0)
    dropped = int((~keep).sum())
    if dropped:
        warnings.warn(f"fit_power_law: dropping {dropped} nonpositive points", RuntimeWarning)
    if keep.sum() < 3:
        raise FitError("fewer than three positive points to fit")
    lx, ly = np.log(x[keep]), np.log(y[keep])
    if stderr is None:
        w = np.ones_like(lx)
    else:
        se = np.asarray(stderr, dtype=float)[keep]
        rel = np.where(se > 0, se / y[keep], 0.0)
        w = 1.0 / np.maximum(rel, 1e-12) ** 2 if np.any(rel > 0) else np.ones_like(lx)
    X = np.stack([np.ones_like(lx), lx], axis=1)
    W = w / w.sum()
    cov = np.linalg.inv(X.T @ (W[:, None] * X))
    beta = cov @ (X.T @ (W * ly))
    res = ly - X @ beta
    dof = max(len(lx) - 2, 1)
    s2 = float(np.sum(W * res ** 2)) / dof
    return PowerFit(float(beta[1]), float(np.exp(beta[0])), float(np.sqrt(s2 * cov[1, 1])),
                    int(keep.sum()), dropped)


def _r2(y, yhat):
    ss = np.sum((y - y.mean()) ** 2)
    return float(1.0 - np.sum((y - yhat) ** 2) / ss) if ss > 0 else 1.0


@dataclass
class GrowthComparison:
    r2_log: float
    r2_power: float
    log_coeffs: tuple
    power_coeffs: tuple

    @property
    def prefers_log(self) -> bool:
        return self.r2_log > self.r2_power


def log_vs_power(x, y, min_exponent: float = 0.2) -> GrowthComparison:
    """Compare ``y = c0 + c1 log x`` with ``y = c0 + c1 x^p`` (``p >= min_exponent``).

    Both models have an offset and are fitted in the linear ``y`` scale; R^2 is
    reported for each.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c1, c0 = np.polyfit(np.log(x), y, 1)
    r2_log = _r2(y, c0 + c1 * np.log(x))

    def power_resid(p):
        X = np.stack([np.ones_like(x), x ** p], axis=1)
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        return float(np.sum((y - X @ coef) ** 2)), coef

    res = optimize.minimize_scalar(lambda p: power_resid(p)[0], bounds=(min_exponent, 4.0),
                                   method="bounded")
    p = float(res.x)
    for cand in (min_exponent, 4.0):
        if power_resid(cand)[0] < power_resid(p)[0]:
            p = cand
    _, coef = power_resid(p)
    r2_pow = _r2(y, coef[0] + coef[1] * x ** p)
    return GrowthComparison(r2_log, r2_pow, (float(c0), float(c1)), (float(coef[0]), float(coef[1]), p))
