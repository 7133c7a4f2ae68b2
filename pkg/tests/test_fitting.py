import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from commlab.fitting import FitError, fit_power_law, log_vs_power


def test_exact_power_law():
    x = np.array([1.0, 2, 4, 8, 16])
    fit = fit_power_law(x, x ** -2.0)
    assert abs(fit.slope + 2) <= 1e-12 and abs(fit.prefactor - 1) <= 1e-12
    assert fit.npoints == 5 and fit.dropped == 0


def test_noisy_power_law():
    rng = np.random.default_rng(0)
    x = np.geomspace(1, 100, 12)
    y = 5 * x ** -3.0 * (1 + 0.01 * rng.standard_normal(12))
    fit = fit_power_law(x, y, 0.01 * y)
    assert abs(fit.slope + 3) <= 0.05 and fit.slope_stderr < 0.05


def test_two_points_is_an_error():
    with pytest.raises(FitError):
        fit_power_law([1, 2], [1, 0.5])


def test_nonpositive_points_dropped_with_warning():
    with pytest.warns(RuntimeWarning):
        fit = fit_power_law([1, 2, 4, 8], [1, -1, 0.0625, 0.015625])
    assert fit.dropped == 1 and abs(fit.slope + 2) < 1e-12
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(FitError):
            fit_power_law([1, 2, 4], [1, -1, 0.1])


@settings(max_examples=30, deadline=None)
@given(st.floats(-4, 4), st.floats(0.1, 10))
def test_recovers_any_exponent(p, c):
    x = np.geomspace(2, 500, 6)
    fit = fit_power_law(x, c * x ** p)
    assert abs(fit.slope - p) < 1e-9 and np.isclose(fit.prefactor, c)


def test_log_versus_power():
    x = np.geomspace(16, 512, 6)
    comp = log_vs_power(x, 0.3 + 0.1 * np.log(x))
    assert comp.prefers_log and comp.r2_log > 0.999999
    comp = log_vs_power(x, 1.0 + 0.02 * x ** 1.0)
    assert not comp.prefers_log and abs(comp.power_coeffs[2] - 1.0) < 0.05
