"""Stationary Gaussian ensembles on the torus and their coefficient fields.

The Gaussian field ``G`` is specified through its spectral density ``S`` and
sampled by filtering white noise, so that the lattice covariance is exactly
``c(x) = M^{-d} sum_k S(k) exp(i k.x)``.  Coefficients are ``a(x) = A(G(x))``
with a pointwise map into lambda-elliptic matrices.

Lattice frequencies enter ``S`` through the symbol magnitude
``|k| = (sum_j 4 sin^2(kappa_j / 2))^{1/2}``, which is smooth on the dual torus
away from the origin; the only singularity of ``S`` is then the cusp at ``k=0``
that produces the algebraic tail of ``c``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .grid import TorusGrid, diff_symbols, irfft, rfft

log = logging.getLogger(__name__)

FAMILIES = ("stable", "matern")
MAP_KINDS = ("scalar-logistic", "skew-logistic")


@dataclass(frozen=True)
class SpectralCovariance:
    """Spectral density of a stationary centered Gaussian field.

    ``stable``: ``S(k) = amplitude * exp(-(length |k|)^alpha0)``, whose inverse
    transform decays like ``|x|^{-d-alpha0}`` for ``alpha0 in (0, 2)``.

    ``matern``: ``S(k) = amplitude * (1 + (length |k|)^2)^{-(nu + d/2)}``,
    covariance with exponential tail.
    """

    alpha0: float = 1.0
    length: float = 1.0
    amplitude: float = 1.0
    family: str = "stable"
    nu: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown covariance family {self.family!r}")
        if not 0.0 < self.alpha0 <= 2.0:
            raise ValueError("alpha0 must lie in (0, 2]")
        if self.length < 0 or self.amplitude < 0:
            raise ValueError("length and amplitude must be nonnegative")

    def in_theorem_range(self, d: int) -> bool:
        return self.family == "stable" and self.alpha0 <= d / 2


def spectral_density(cov: SpectralCovariance, k, d: int | None = None) -> np.ndarray:
    """Evaluate ``S`` at frequency vectors ``k`` of shape ``(..., d)``.

    With ``d`` given, ``k`` is read as an array of magnitudes instead.
    """
    k = np.asarray(k, dtype=float)
    if d is None:
        d = k.shape[-1]
        kk = np.sqrt(np.sum(k ** 2, axis=-1))
    else:
        kk = np.abs(k)
    if cov.family == "stable":
        return cov.amplitude * np.exp(-(cov.length * kk) ** cov.alpha0)
    return cov.amplitude * (1.0 + (cov.length * kk) ** 2) ** (-(cov.nu + d / 2))


def lattice_frequency_magnitude(shape) -> np.ndarray:
    """``|k|`` on the real-FFT layout of a grid."""
    _, lap = diff_symbols(tuple(shape))
    return np.sqrt(lap)


@lru_cache(maxsize=16)
def lattice_density(cov: SpectralCovariance, grid: TorusGrid) -> np.ndarray:
    """``S`` on every lattice frequency of ``grid`` (real-FFT layout)."""
    S = spectral_density(cov, lattice_frequency_magnitude(grid.shape), d=grid.d)
    S.setflags(write=False)
    return S


def lattice_covariance(cov: SpectralCovariance, grid: TorusGrid) -> np.ndarray:
    """``c(x) = M^{-d} sum_k S(k) e^{ik.x}`` on the lattice."""
    return irfft(lattice_density(cov, grid).astype(complex), grid.shape)


@dataclass(frozen=True)
class CoefficientMap:
    """Pointwise map ``G -> A(G)`` into lambda-elliptic matrices.

    ``scalar-logistic``: ``A(g) = s(g) Id`` with ``s(g) = lam + (1-lam)/(1+e^{-g})``.

    ``skew-logistic``: adds ``skew * sqrt(s (1-s)) J`` with a fixed unit skew
    matrix ``J``; for ``skew < 1`` both ``xi.a xi >= lam |xi|^2`` and
    ``xi.a^{-1} xi >= |xi|^2`` still hold.
    """

    lam: float = 0.25
    kind: str = "scalar-logistic"
    skew: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lambda must lie in (0, 1)")
        if self.kind not in MAP_KINDS:
            raise ValueError(f"unknown map kind {self.kind!r}")
        if not 0.0 <= self.skew < 1.0:
            raise ValueError("skew fraction must lie in [0, 1)")

    @property
    def lipschitz(self) -> float:
        # |s'| <= (1-lam)/4; the skew part sqrt(s(1-s)) is not Lipschitz at s=1,
        # but s never reaches 1 for finite g and its slope stays below (1-lam)/2
        if self.kind == "scalar-logistic":
            return (1.0 - self.lam) / 4.0
        return (1.0 - self.lam) / 4.0 + self.skew * (1.0 - self.lam) / 2.0

    def slope_bound(self, d: int) -> float:
        """``sup_g |A'(g)|`` in the Frobenius norm, by a dense scan of ``g``."""
        g = np.linspace(-40.0, 40.0, 400001)
        s = self.scalar(g)
        ds = (s - self.lam) * (1.0 - s) / (1.0 - self.lam)
        sq = d * ds ** 2
        if self.kind == "skew-logistic" and self.skew > 0:
            root = np.sqrt(s * (1.0 - s))
            dt = np.where(root > 0, self.skew * (1.0 - 2.0 * s) * ds / (2.0 * np.where(root > 0, root, 1.0)), 0.0)
            sq = sq + np.sum(_skew_generator(d) ** 2) * dt ** 2
        return float(np.sqrt(np.max(sq)))

    @property
    def symmetric(self) -> bool:
        return self.kind == "scalar-logistic" or self.skew == 0.0

    def scalar(self, g):
        return self.lam + (1.0 - self.lam) / (1.0 + np.exp(-np.asarray(g, dtype=float)))


def _skew_generator(d: int) -> np.ndarray:
    if d == 2:
        return np.array([[0.0, -1.0], [1.0, 0.0]])
    n = np.ones(3) / np.sqrt(3.0)
    return np.array([[0.0, -n[2], n[1]], [n[2], 0.0, -n[0]], [-n[1], n[0], 0.0]])


def apply_map(cmap: CoefficientMap, G: np.ndarray) -> np.ndarray:
    """Matrix field ``a(x) = A(G(x))`` of shape ``(d, d) + G.shape``."""
    d = G.ndim
    s = cmap.scalar(G)
    a = np.zeros((d, d) + G.shape)
    for k in range(d):
        a[k, k] = s
    if cmap.kind == "skew-logistic" and cmap.skew > 0:
        t = cmap.skew * np.sqrt(s * (1.0 - s))
        J = _skew_generator(d)
        for k in range(d):
            for l in range(d):
                if J[k, l] != 0.0:
                    a[k, l] += J[k, l] * t
    return a


def transpose_field(a: np.ndarray) -> np.ndarray:
    """Pointwise transpose of a matrix field."""
    return np.ascontiguousarray(a.swapaxes(0, 1))


@dataclass(frozen=True)
class EnsembleSpec:
    grid: TorusGrid
    covariance: SpectralCovariance = field(default_factory=SpectralCovariance)
    cmap: CoefficientMap = field(default_factory=CoefficientMap)
    seed: int = 0

    def __post_init__(self):
        if not self.covariance.in_theorem_range(self.grid.d):
            log.info("ensemble outside the theorem's range (alpha0 > d/2 or non-stable family)")


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for sample ``index`` of a run seeded by ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed) % 2 ** 64, spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))


def sample_gaussian_field(spec: EnsembleSpec, index: int) -> np.ndarray:
    """Sample ``index`` of the Gaussian field ``G``; bitwise reproducible."""
    grid = spec.grid
    w = sample_rng(spec.seed, index).standard_normal(grid.shape)
    S = lattice_density(spec.covariance, grid)
    return irfft(rfft(w) * np.sqrt(S), grid.shape)


def sample_coefficient(spec: EnsembleSpec, index: int) -> np.ndarray:
    """Coefficient field ``a = A(G)`` for sample ``index``."""
    return apply_map(spec.cmap, sample_gaussian_field(spec, index))


@dataclass
class TailReport:
    ok: bool
    slope: float = float("nan")
    intercept: float = float("nan")
    residual: float = float("nan")
    message: str = ""
    lags: np.ndarray | None = None
    values: np.ndarray | None = None


def covariance_tail_check(spec: EnsembleSpec, rmin: float | None = None,
                          rmax: float | None = None, nbins: int = 24) -> TailReport:
    """Fit ``log|c(x)|`` against ``log|x|`` over lags in ``[rmin, rmax]``.

    Defaults: ``rmin = max(length, 2)``, ``rmax = M/4``.  The covariance is
    averaged over logarithmic radial shells before fitting.
    """
    grid = spec.grid
    cov = spec.covariance
    c = lattice_covariance(cov, grid)
    c0 = float(c.flat[0])
    if not np.isfinite(c0) or c0 <= 0.0:
        return TailReport(False, message="degenerate covariance (zero variance)")
    rmin = max(cov.length, 2.0) if rmin is None else rmin
    rmax = grid.M / 4 if rmax is None else rmax
    r = grid.radius()
    sel = (r >= rmin) & (r <= rmax)
    edges = np.geomspace(rmin, rmax * (1 + 1e-9), nbins + 1)
    which = np.digitize(r[sel], edges) - 1
    vals = np.abs(c[sel])
    lags, means = [], []
    for b in range(nbins):
        m = which == b
        if m.any():
            lags.append(np.exp(np.mean(np.log(r[sel][m]))))
            means.append(np.mean(vals[m]))
    lags, means = np.array(lags), np.array(means)
    good = means > 1e-14 * c0
    if good.sum() < 3:
        return TailReport(False, message="covariance vanishes at all fitted lags",
                          lags=lags, values=means)
    x, y = np.log(lags[good]), np.log(means[good])
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    if slope > -0.5:
        return TailReport(False, slope, intercept, resid, "covariance does not decay",
                          lags, means)
    return TailReport(True, float(slope), float(intercept), resid, "", lags, means)


# -- exact second moments of the coefficient field ---------------------------

_HERMITE_NODES = 160
_HERMITE_TERMS = 64


def map_entry_moments(cmap: CoefficientMap, variance: float, d: int, k: int, l: int):
    """Mean and Hermite coefficients of ``g -> A(g)_{kl}`` under ``g ~ N(0, variance)``.

    Returns ``(mean, b)`` with ``A(sqrt(variance) xi)_{kl} = sum_n b[n] He_n(xi)``.
    """
    x, w = np.polynomial.hermite_e.hermegauss(_HERMITE_NODES)
    w = w / w.sum()
    g = np.sqrt(variance) * x
    # quadrature nodes laid out as a (N, 1, ...) field so apply_map sees d axes
    vals = apply_map(cmap, g.reshape((-1,) + (1,) * (d - 1)))[k, l].ravel()
    b = np.empty(_HERMITE_TERMS)
    fact = 1.0
    for n in range(_HERMITE_TERMS):
        if n > 0:
            fact *= n
        He = np.polynomial.hermite_e.hermeval(x, [0.0] * n + [1.0])
        b[n] = np.sum(w * vals * He) / fact
    return float(b[0]), b


def coefficient_covariance(spec: EnsembleSpec, kl, mn) -> np.ndarray:
    """``r -> Cov(a_kl(0), a_mn(r))`` on the lattice, from the Hermite expansion
    ``sum_{n>=1} n! b_n b'_n (c(r)/c(0))^n`` (Mehler's formula)."""
    grid = spec.grid
    c = lattice_covariance(spec.covariance, grid)
    c0 = float(c.flat[0])
    if c0 <= 0.0:
        return np.zeros(grid.shape)
    _, b1 = map_entry_moments(spec.cmap, c0, grid.d, *kl)
    _, b2 = map_entry_moments(spec.cmap, c0, grid.d, *mn)
    rho = c / c0
    out = np.zeros(grid.shape)
    fact = 1.0
    pw = np.ones(grid.shape)
    for n in range(1, _HERMITE_TERMS):
        fact *= n
        pw = pw * rho
        out += fact * b1[n] * b2[n] * pw
    return out


def coefficient_mean(spec: EnsembleSpec) -> np.ndarray:
    """Exact ``E[a]`` (a constant matrix)."""
    d = spec.grid.d
    c0 = float(lattice_covariance(spec.covariance, spec.grid).flat[0])
    out = np.zeros((d, d))
    for k in range(d):
        for l in range(d):
            out[k, l] = map_entry_moments(spec.cmap, max(c0, 0.0), d, k, l)[0]
    return out
