"""Test functions, observables and the functional derivative of ``F = sum_x g Xi^{o,n}_{ij}``.

Lattice form of the representation formula
------------------------------------------
With ``G_t = Dbar_{t_1} ... Dbar_{t_m} g`` (backward differences of the sampled
bump) and dual strings ``s = (j,) + t``, summation by parts gives exactly

    dF/da = (g e_j + grad U + grad h) (x) (grad phi_i + e_i)

in the sense ``sum_x dF/da : delta_a = sum_x v . delta_a (grad phi_i + e_i)``,
where ``U = sum_{k=1..n} sum_t G_t phi^{*,k}_s`` and ``h`` solves
``-div(a^* grad h) = div(f)`` with

    f = sum_{k=1..n} sum_t [a^* (S phi^{*,k}_s o D G_t) - W(sigma^{*,k}_s, G_t)]
        - sum_{k=2..n} sum_t G_t (a^* phi^{*,k-1}_{s'} - sigma^{*,k-1}_{s'}) e_{t_{k-1}}.

Here ``(S phi o D G)_l(x) = phi(x + e_l) D_l G(x)`` is the discrete product
rule remainder and ``W(sigma, G)_k(x) = sum_l sigma_kl(x - e_l) D_l G(x - e_l)``
is what ``G div(sigma)`` turns into when tested against gradients.  In the
continuum limit ``f`` reduces to ``(a^* phi^{*,n} - sigma^{*,n}) grad d^{n-1} g``;
that form (with analytic derivatives of ``g``) is available as ``mode="analytic"``.

Effective tensors are treated as deterministic: they are frozen at their
values for the unperturbed field.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from .commutator import standard_component
from .correctors import CorrectorHierarchy, build_hierarchy, level_flux
from .elliptic import ConvergenceError, SolveReport, matvec, solve_div_form
from .ensemble import EnsembleSpec, sample_coefficient, transpose_field
from .fitting import fit_power_law
from .grid import TorusGrid, forward_diff, gradient, irfft, iterated_backward, rfft, shift
from .parallel import map_samples

log = logging.getLogger(__name__)


# -- bump -------------------------------------------------------------------

def _psi_derivs(s):
    """``psi(s) = exp(-1/(1-s))`` and its first three derivatives, zero for ``s >= 1``."""
    s = np.asarray(s, dtype=float)
    inside = s < 1.0
    u = np.where(inside, 1.0 / np.where(inside, 1.0 - s, 1.0), 0.0)
    e = np.where(inside, np.exp(-u), 0.0)
    return (e,
            -u ** 2 * e,
            (u ** 4 - 2 * u ** 3) * e,
            (-u ** 6 + 6 * u ** 5 - 6 * u ** 4) * e)


@lru_cache(maxsize=None)
def bump_constant(d: int) -> float:
    """``1 / int_{B_1} exp(-1/(1-|y|^2)) dy``."""
    sphere = {1: 2.0, 2: 2 * np.pi, 3: 4 * np.pi}[d]
    val, _ = integrate.quad(lambda r: np.exp(-1.0 / (1.0 - r * r)) * r ** (d - 1), 0.0, 1.0,
                            epsabs=1e-15, epsrel=1e-13)
    return 1.0 / (sphere * val)


def bump_derivative(y: np.ndarray, idx=()) -> np.ndarray:
    """Analytic ``d^idx eta(y)`` for ``y`` of shape ``(d, ...)``; orders 0 to 3."""
    d = y.shape[0]
    k = len(idx)
    if k > 3:
        raise ValueError("bump derivatives are available up to order 3")
    s = np.sum(y ** 2, axis=0)
    p0, p1, p2, p3 = _psi_derivs(s)
    C = bump_constant(d)
    if k == 0:
        out = p0
    elif k == 1:
        a, = idx
        out = 2 * y[a] * p1
    elif k == 2:
        a, b = idx
        out = 4 * y[a] * y[b] * p2 + (2 * p1 if a == b else 0.0)
    else:
        a, b, c = idx
        lin = (y[c] if a == b else 0.0) + (y[b] if a == c else 0.0) + (y[a] if b == c else 0.0)
        out = 4 * lin * p2 + 8 * y[a] * y[b] * y[c] * p3
    return C * out


@dataclass(frozen=True)
class TestFunction:
    """``g(x) = R^{-d} eta((x - center) / R)`` on the torus (minimal image)."""

    __test__ = False  # not a pytest class

    R: float
    center: tuple = ()

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("radius must be positive")

    def _center(self, grid: TorusGrid):
        c = self.center if len(self.center) else (0,) * grid.d
        if len(c) != grid.d:
            raise ValueError("center dimension mismatch")
        return np.asarray(c, dtype=float)

    def shifted(self, offset) -> "TestFunction":
        c = tuple(np.asarray(self.center if len(self.center) else np.zeros(len(offset))) + offset)
        return TestFunction(self.R, tuple(float(v) for v in c))

    def check_fits(self, grid: TorusGrid):
        """Support plus a margin of ``R`` must fit in the torus."""
        if 3 * self.R > grid.M:
            raise ValueError(f"test function radius {self.R} too large for torus side {grid.M}")


def bump_eval(tf: TestFunction, grid: TorusGrid, order=()) -> np.ndarray:
    """``d^order g`` sampled at the lattice points (analytic, no differencing)."""
    y = grid.offsets(tf._center(grid)) / tf.R
    return tf.R ** (-grid.d - len(order)) * bump_derivative(y, tuple(order))


def lattice_derivatives(g: np.ndarray, n: int) -> dict:
    """``G_t`` for every string ``t`` of length ``< n`` (backward differences of ``g``)."""
    d = g.ndim
    out = {(): g}
    for m in range(1, n):
        for t in itertools.product(range(d), repeat=m):
            key = tuple(sorted(t))
            if key not in out:
                out[key] = iterated_backward(g, key)
            out[t] = out[key]
    return out


# -- observables ------------------------------------------------------------

def observable(tf: TestFunction, xi: np.ndarray, grid: TorusGrid | None = None) -> float:
    """``sum_x g(x) Xi(x)``."""
    grid = TorusGrid.of(xi) if grid is None else grid
    tf.check_fits(grid)
    return float(np.sum(bump_eval(tf, grid) * xi))


def observable_shifts(g0: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """``F(z) = sum_x g0(x - z) Xi(x)`` for every translation ``z`` at once."""
    return irfft(np.conj(rfft(g0)) * rfft(xi), xi.shape)


# -- h equation and representation formula ------------------------------------

def _product_remainder(phi: np.ndarray, G: np.ndarray) -> np.ndarray:
    return np.stack([shift(phi, l) * forward_diff(G, l) for l in range(G.ndim)])


def _sigma_term(sigma: np.ndarray, G: np.ndarray) -> np.ndarray:
    d = G.ndim
    DG = [forward_diff(G, l) for l in range(d)]
    return np.stack([sum(np.roll(sigma[k, l] * DG[l], 1, axis=l) for l in range(d))
                     for k in range(d)])


def _dual_strings(hd: CorrectorHierarchy, j: int, n: int):
    d = hd.d
    for k in range(1, n + 1):
        for t in itertools.product(range(d), repeat=k - 1):
            yield k, t, (j,) + t


def h_flux(hd: CorrectorHierarchy, tf: TestFunction, j: int, n: int, mode: str = "lattice"):
    """Right-hand side flux ``f_j`` of the h equation (see module docstring)."""
    grid = TorusGrid.of(hd.a, lead=2)
    d = grid.d
    a_s = hd.a
    if mode == "analytic":
        f = np.zeros((d,) + grid.shape)
        for t in itertools.product(range(d), repeat=n - 1):
            s = (j,) + t
            grad = np.stack([bump_eval(tf, grid, t + (l,)) for l in range(d)])
            f += matvec(a_s, grad) * hd.phi[s] - matvec(hd.sigma[s], grad)
        return f
    if mode != "lattice":
        raise ValueError(f"unknown mode {mode!r}")
    G = lattice_derivatives(bump_eval(tf, grid), n)
    f = np.zeros((d,) + grid.shape)
    for k, t, s in _dual_strings(hd, j, n):
        Gt = G[t]
        f += matvec(a_s, _product_remainder(hd.phi[s], Gt)) - _sigma_term(hd.sigma[s], Gt)
        if k >= 2:
            p = s[:-1]
            f -= Gt * level_flux(a_s, hd.phi_of(p), hd.sigma_of(p), s[-1])
    return f


def h_solve(hd: CorrectorHierarchy, tf: TestFunction, j: int, n: int, tol: float = 1e-11,
            mode: str = "lattice", maxiter: int = 2000):
    """Solve ``-div(a^* grad h_j) = div(f_j)``; returns ``(h, report, f)``.

    ``hd`` is the dual hierarchy (built from the transposed field) with flux
    correctors up to level ``n``.
    """
    if n > hd.depth or any((j,) + t not in hd.sigma for t in itertools.product(range(hd.d), repeat=n - 1)):
        raise ValueError("dual hierarchy lacks the level-n flux correctors")
    f = h_flux(hd, tf, j, n, mode)
    h, rep = solve_div_form(hd.a, f, tol=tol, maxiter=maxiter)
    if not rep.converged:
        raise ConvergenceError("h equation did not converge", rep)
    return h, rep, f


@dataclass
class FunctionalDerivative:
    """``dF/da`` as a matrix field with ``dF = sum_x sum_kl D_kl delta_a_kl``.

    ``D_kl = v_k w_l`` with ``w = grad phi_i + e_i`` and ``v = local + grad_h``.
    """

    local: np.ndarray
    grad_h: np.ndarray
    w: np.ndarray
    h: np.ndarray
    flux: np.ndarray
    report: SolveReport

    @property
    def matrix(self) -> np.ndarray:
        v = self.local + self.grad_h
        return v[:, None] * self.w[None, :]

    @property
    def local_matrix(self) -> np.ndarray:
        return self.local[:, None] * self.w[None, :]

    def pair(self, delta_a: np.ndarray) -> float:
        """``sum_x dF/da : delta_a``."""
        v = self.local + self.grad_h
        return float(np.sum(v * matvec(delta_a, self.w)))

    def norm_field(self) -> np.ndarray:
        """Cellwise Frobenius norm ``|v| |w|``."""
        v = self.local + self.grad_h
        return np.sqrt(np.sum(v ** 2, axis=0) * np.sum(self.w ** 2, axis=0))


def representation_derivative(h: CorrectorHierarchy, tf: TestFunction, i: int, j: int, n: int,
                              tol: float = 1e-11, mode: str = "lattice") -> FunctionalDerivative:
    """Assemble ``dF^{o,n}_{ij}/da`` from the hierarchy, its dual and the h solve."""
    if h.dual is None:
        raise ValueError("dual hierarchy required")
    hd = h.dual
    grid = TorusGrid.of(h.a, lead=2)
    tf.check_fits(grid)
    g = bump_eval(tf, grid)
    G = lattice_derivatives(g, n)
    U = np.zeros(grid.shape)
    for k, t, s in _dual_strings(hd, j, n):
        U += G[t] * hd.phi[s]
    local = gradient(U)
    local[j] += g
    hj, rep, f = h_solve(hd, tf, j, n, tol=tol, mode=mode)
    w = gradient(h.phi[(i,)])
    w[i] += 1.0
    return FunctionalDerivative(local, gradient(hj), w, hj, f, rep)


# -- Gateaux check --------------------------------------------------------------

def _min_sym_eig(a: np.ndarray) -> float:
    d = a.shape[0]
    sym = 0.5 * (a + a.swapaxes(0, 1))
    mats = np.moveaxis(sym.reshape(d, d, -1), -1, 0)
    return float(np.min(np.linalg.eigvalsh(mats)))


def frozen_observable(a: np.ndarray, ref: CorrectorHierarchy, tf: TestFunction, i: int, j: int,
                      n: int, tol: float, x0=None):
    """``F^{o,n}_{ij}`` for field ``a`` with the effective tensors of ``ref``."""
    phi, rep = solve_div_form(a, a[:, i], tol=tol, x0=x0)
    tmp = CorrectorHierarchy(a=a, depth=n, phi={(i,): phi}, abar=ref.abar, dual=ref.dual, tol=tol)
    xi = standard_component(tmp, n, i, j)
    return observable(tf, xi), phi, rep


@dataclass
class GateauxTable:
    rows: list  # dicts: t, lhs, rhs, rel_error

    @property
    def errors(self):
        return np.array([r["rel_error"] for r in self.rows])

    def halving_ratios(self):
        e = self.errors
        return e[1:] / e[:-1]


def gateaux_check(a: np.ndarray, tf: TestFunction, i: int, j: int, n: int, delta_a: np.ndarray,
                  steps, tol: float = 1e-13, hierarchy: CorrectorHierarchy | None = None) -> GateauxTable:
    """Compare ``(F(a + t da) - F(a)) / t`` with ``sum dF/da : da`` for each ``t``."""
    steps = list(steps)
    for t in steps:
        if _min_sym_eig(a + t * delta_a) <= 0.0:
            raise ValueError(f"a + t delta_a is not elliptic at t={t}")
    h = hierarchy if hierarchy is not None else build_hierarchy(a, n, tol=tol, dual=True)
    D = representation_derivative(h, tf, i, j, n, tol=tol)
    rhs = D.pair(delta_a)
    F0, phi0, _ = frozen_observable(a, h, tf, i, j, n, tol)
    rows = []
    for t in steps:
        Ft, _, _ = frozen_observable(a + t * delta_a, h, tf, i, j, n, tol, x0=phi0)
        lhs = (Ft - F0) / t
        den = abs(rhs) if rhs != 0.0 else 1.0
        rows.append(dict(t=t, lhs=lhs, rhs=rhs, rel_error=abs(lhs - rhs) / den if rhs or lhs else 0.0))
    return GateauxTable(rows)


# -- decay of grad h --------------------------------------------------------------

@dataclass
class DecayProfile:
    R: float
    lags: np.ndarray
    moment4: np.ndarray  # <|grad h|^4>^{1/4} per radial bin
    slope: float
    cz_norm: float
    samples: int


@dataclass
class GradHDecay:
    profiles: list
    cz_exponent: float


def _dual_for(a: np.ndarray, j: int, n: int, tol: float) -> CorrectorHierarchy:
    return build_hierarchy(transpose_field(a), n, tol=tol, dual=False, first=(j,))


def _grad_h_sample(args):
    spec, index, radii, j, n, tol = args
    a = sample_coefficient(spec, index)
    hd = _dual_for(a, j, n, tol)
    out = []
    for R in radii:
        hj, _, _ = h_solve(hd, TestFunction(R), j, n, tol=tol)
        out.append(np.sum(gradient(hj) ** 2, axis=0) ** 2)
    return out


def radial_bins(grid: TorusGrid, field_: np.ndarray, rmin: float, rmax: float, nbins: int = 16):
    r = grid.radius()
    edges = np.geomspace(rmin, rmax * (1 + 1e-9), nbins + 1)
    which = np.digitize(r, edges) - 1
    lags, vals = [], []
    for b in range(nbins):
        m = which == b
        if m.any():
            lags.append(np.exp(np.mean(np.log(r[m]))))
            vals.append(float(np.mean(field_[m])))
    return np.array(lags), np.array(vals)


def grad_h_decay(spec: EnsembleSpec, radii, n: int = 1, samples: int = 64, j: int = 0,
                 tol: float = 1e-9, workers: int | None = None) -> GradHDecay:
    """Monte Carlo ``<|grad h_j(x)|^4>^{1/4}`` around a test function centred at the origin."""
    grid = spec.grid
    radii = list(radii)
    if grid.M < 8 * max(radii):
        raise ValueError("torus side must be at least 8 times the largest radius")
    res = map_samples(_grad_h_sample, [(spec, k, tuple(radii), j, n, tol) for k in range(samples)],
                      workers)
    profiles = []
    for q, R in enumerate(radii):
        m4 = sum(r[q] for r in res) / samples  # <|grad h|^4> per cell
        lags, vals = radial_bins(grid, m4, 2 * R, grid.M / 4, nbins=12)
        prof = vals ** 0.25
        slope = fit_power_law(lags, prof).slope
        cz = float(np.sqrt(np.sum(np.sqrt(m4))))
        profiles.append(DecayProfile(R, lags, prof, slope, cz, samples))
    cz_exp = fit_power_law(radii, [p.cz_norm for p in profiles]).slope if len(radii) >= 3 else float("nan")
    return GradHDecay(profiles, cz_exp)


# -- covariance estimate ---------------------------------------------------------

def cov_bound_rhs(profile_f: np.ndarray, profile_h: np.ndarray, c: np.ndarray) -> float:
    """``sum_x pF(x) sum_y |c(x - y)| pH(y)`` by circular convolution."""
    shape = profile_f.shape
    conv = irfft(rfft(np.abs(c)) * rfft(profile_h), shape)
    return float(np.sum(profile_f * conv))


def cov_bound_rhs_shifts(profile_f: np.ndarray, profile_h0: np.ndarray, c: np.ndarray) -> np.ndarray:
    """``cov_bound_rhs(pF, pH0(. - y), c)`` for every translation ``y`` of the second profile."""
    shape = profile_f.shape
    K = rfft(np.abs(c)) * rfft(profile_h0)
    return irfft(np.conj(K) * rfft(profile_f), shape)
