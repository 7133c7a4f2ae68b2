import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from commlab.ensemble import (CoefficientMap, EnsembleSpec, SpectralCovariance, apply_map,
                              coefficient_covariance, coefficient_mean, covariance_tail_check,
                              lattice_covariance, sample_coefficient, sample_gaussian_field,
                              spectral_density, transpose_field)
from commlab.grid import TorusGrid


def spec(d=2, M=16, amplitude=1.0, kind="scalar-logistic", seed=0, **kw):
    return EnsembleSpec(TorusGrid(d, M), SpectralCovariance(amplitude=amplitude, **kw),
                        CoefficientMap(0.25, kind), seed)


def test_spectral_density_examples():
    cov = SpectralCovariance(1.0, 1.0, 2.5)
    assert spectral_density(cov, np.zeros(2)) == 2.5
    assert np.isclose(spectral_density(cov, np.array([2.0, 0.0])), 2.5 * np.exp(-2))
    assert np.all(spectral_density(SpectralCovariance(amplitude=0.0), np.ones((5, 3))) == 0)


def test_covariance_parameter_checks():
    with pytest.raises(ValueError):
        SpectralCovariance(alpha0=0.0)
    with pytest.raises(ValueError):
        SpectralCovariance(family="cauchy")
    assert SpectralCovariance(alpha0=1.0).in_theorem_range(2)
    assert not SpectralCovariance(alpha0=1.5).in_theorem_range(2)


def test_zero_amplitude_gives_zero_field():
    assert np.all(sample_gaussian_field(spec(amplitude=0.0), 3) == 0)


def test_samples_reproducible_and_distinct():
    s = spec()
    a, b = sample_gaussian_field(s, 5), sample_gaussian_field(s, 5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample_gaussian_field(s, 6))


def test_lag_covariances_against_spectral_sum():
    s = spec(length=1.5)
    c = lattice_covariance(s.covariance, s.grid)
    X = np.array([sample_gaussian_field(s, k) for k in range(10000)])
    for lag in ((0, 0), (1, 0), (0, 3)):
        prod = X[:, 0, 0] * X[:, lag[0], lag[1]]
        se = prod.std(ddof=1) / np.sqrt(len(prod))
        assert abs(prod.mean() - c[lag]) < 3 * se
    # lag zero equals M^{-d} sum_k S(k) over the full frequency grid
    k = 2 * np.pi * np.fft.fftfreq(16)
    kk = (2 - 2 * np.cos(k[:, None])) + (2 - 2 * np.cos(k[None, :]))
    S = spectral_density(s.covariance, np.sqrt(kk), d=2)
    assert np.isclose(c[0, 0], S.sum() / 256)


def test_stationarity_shifted_windows():
    s = spec(length=1.5, seed=3)
    X = np.array([sample_gaussian_field(s, k) for k in range(4000)])
    p1 = X[:, 0, 0] * X[:, 2, 0]
    p2 = X[:, 7, 5] * X[:, 9, 5]
    se = np.hypot(p1.std(ddof=1), p2.std(ddof=1)) / np.sqrt(len(p1))
    assert abs(p1.mean() - p2.mean()) < 3 * se


def test_tail_exponent_stable_family():
    rep = covariance_tail_check(spec(M=512))
    assert rep.ok and abs(rep.slope + 3) <= 0.3


def test_tail_check_matern_and_degenerate():
    rep = covariance_tail_check(spec(M=256, family="matern", length=2.0))
    assert not rep.ok or rep.slope < -3
    bad = covariance_tail_check(spec(M=64, amplitude=0.0))
    assert not bad.ok and "degenerate" in bad.message


def test_map_midpoint_and_limits():
    m = CoefficientMap(0.25)
    a0 = apply_map(m, np.zeros((2, 2)))
    assert np.allclose(a0[0, 0], 0.625) and np.allclose(a0[0, 1], 0)
    big = apply_map(m, np.full((2, 2), 60.0))
    small = apply_map(m, np.full((2, 2), -60.0))
    assert np.allclose(big[0, 0], 1.0) and np.allclose(small[1, 1], 0.25)


@pytest.mark.parametrize("kind", ["scalar-logistic", "skew-logistic"])
@pytest.mark.parametrize("d", [2, 3])
def test_ellipticity_every_cell(kind, d):
    rng = np.random.default_rng(d)
    G = 3 * rng.standard_normal((8,) * d)
    a = apply_map(CoefficientMap(0.25, kind), G)
    mats = np.moveaxis(a.reshape(d, d, -1), -1, 0)
    sym = 0.5 * (mats + mats.transpose(0, 2, 1))
    ev = np.linalg.eigvalsh(sym)
    assert ev.min() >= 0.25 - 1e-12 and ev.max() <= 1 + 1e-12
    inv = np.linalg.inv(mats)
    ev_inv = np.linalg.eigvalsh(0.5 * (inv + inv.transpose(0, 2, 1)))
    assert ev_inv.min() >= 1 - 1e-12


@settings(max_examples=25, deadline=None)
@given(st.floats(-8, 8), st.floats(-8, 8))
def test_map_lipschitz(g1, g2):
    for kind in ("scalar-logistic", "skew-logistic"):
        m = CoefficientMap(0.25, kind)
        A1 = apply_map(m, np.full((1, 1), g1))[..., 0, 0]
        A2 = apply_map(m, np.full((1, 1), g2))[..., 0, 0]
        assert np.linalg.norm(A1 - A2, 2) <= m.lipschitz * abs(g1 - g2) + 1e-12
        assert np.linalg.norm(A1 - A2) <= m.slope_bound(2) * abs(g1 - g2) + 1e-12


def test_transpose_field():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 3, 4, 4, 4))
    t = transpose_field(a)
    assert np.array_equal(t[0, 2], a[2, 0]) and np.array_equal(transpose_field(t), a)
    sym = a + transpose_field(a)
    assert np.array_equal(transpose_field(sym), sym)


@pytest.mark.parametrize("kind,kl,mn", [("scalar-logistic", (0, 0), (0, 0)),
                                        ("skew-logistic", (0, 1), (1, 1))])
def test_coefficient_moments_monte_carlo(kind, kl, mn):
    s = spec(kind=kind, length=1.5, seed=8)
    K = coefficient_covariance(s, kl, mn)
    E = coefficient_mean(s)
    A = np.array([sample_coefficient(s, k) for k in range(3000)])
    x = A[:, kl[0], kl[1], 0, 0]
    for lag in ((0, 0), (1, 0)):
        y = A[:, mn[0], mn[1], lag[0], lag[1]]
        prod = (x - E[kl]) * (y - E[mn])
        assert abs(prod.mean() - K[lag]) < 4 * prod.std(ddof=1) / np.sqrt(len(prod))
    assert abs(x.mean() - E[kl]) < 4 * x.std(ddof=1) / np.sqrt(len(x))
