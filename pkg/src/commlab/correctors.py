"""Higher-order corrector hierarchy on the torus.

For a coefficient field ``a`` the hierarchy holds, for levels ``n = 1..depth``
and index strings ``s = (i_1, ..., i_n)``:

* ``phi[s]``: mean-zero solution of
  ``-div(a grad phi_s) = div((a phi_{s'} - sigma_{s'}) e_{i_n})``, ``s' = s[:-1]``
* ``abar[n][s'][:, i_n] = mean(a (grad phi_s + phi_{s'} e_{i_n}))``
* ``sigma[s]``: skew matrix field with
  ``div(sigma_s) = a grad phi_s + (a phi_{s'} - sigma_{s'}) e_{i_n} - abar e_{i_n}``

with ``phi_() = 1`` and ``sigma_() = 0``.  Ensemble averages are replaced by
torus averages of the single sample, which makes the flux exactly mean-zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .elliptic import DEFAULT_MAXITER, DEFAULT_TOL, ConvergenceError, matvec, solve_div_form
from .ensemble import EnsembleSpec, sample_coefficient, transpose_field
from .grid import TorusGrid, adjoint_div, diff_symbols, gradient, irfft, rfft
from .parallel import map_samples

log = logging.getLogger(__name__)


class FluxCorrectorError(RuntimeError):
    pass


@dataclass
class CorrectorHierarchy:
    """Correctors, flux correctors and effective tensors of one coefficient sample."""

    a: np.ndarray
    depth: int
    phi: dict = field(default_factory=dict)
    sigma: dict = field(default_factory=dict)
    abar: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)
    dual: "CorrectorHierarchy | None" = None
    tol: float = DEFAULT_TOL

    @property
    def d(self) -> int:
        return self.a.shape[0]

    @property
    def shape(self):
        return self.a.shape[2:]

    def phi_of(self, s):
        """``phi_s`` as an array; the empty string gives the constant 1."""
        s = tuple(s)
        if not s:
            return np.ones(self.shape)
        return self.phi[s]

    def sigma_of(self, s):
        s = tuple(s)
        if not s:
            return np.zeros((self.d, self.d) + self.shape)
        return self.sigma[s]

    def abar_matrix(self, n: int, s=()):
        """Effective matrix ``abar^n_{s}`` (``len(s) == n - 1``)."""
        return self.abar[n][tuple(s)]

    def strings(self, n: int):
        return [s for s in self.phi if len(s) == n]


def max_depth(d: int) -> int:
    """Deepest level built: ``ceil(d/2)``, the order of the standard commutator."""
    return (d + 1) // 2


def level_flux(a, phi_prev, sigma_prev, i):
    """``(a phi_{s'} - sigma_{s'}) e_i`` as a vector field."""
    return a[:, i] * phi_prev - sigma_prev[:, i]


def build_level(h: CorrectorHierarchy, n: int, first=None, tol: float | None = None,
                maxiter: int = DEFAULT_MAXITER, with_flux: bool = True):
    """Solve every level-``n`` corrector, then its effective coefficients and flux correctors.

    ``first`` restricts the strings to those starting with one of the given
    indices (only honoured at level 1; deeper levels extend whatever strings
    exist at level ``n-1``).
    """
    a = h.a
    d = h.d
    tol = h.tol if tol is None else tol
    if n == 1:
        parents = [()]
        lasts = range(d) if first is None else first
    else:
        parents = h.strings(n - 1)
        lasts = range(d)
        if any(p not in h.sigma for p in parents) and n > 1:
            raise ValueError(f"level {n - 1} flux correctors missing; build it with_flux=True")
    mat = h.abar.setdefault(n, {})
    for p in parents:
        phi_p = h.phi_of(p)
        sig_p = h.sigma_of(p)
        A = mat.setdefault(p, np.full((d, d), np.nan))
        for i in lasts:
            s = p + (i,)
            f = level_flux(a, phi_p, sig_p, i)
            u, rep = solve_div_form(a, f, tol=tol, maxiter=maxiter)
            if not rep.converged:
                raise ConvergenceError(f"corrector {s} did not converge", rep)
            h.phi[s] = u
            h.reports[s] = rep
            A[:, i] = effective_column(a, u, phi_p, i)
            if with_flux:
                q = matvec(a, gradient(u)) + f - A[:, i].reshape((d,) + (1,) * d)
                h.sigma[s] = flux_corrector(q, tol=tol, scale=float(np.linalg.norm(adjoint_div(f))))
    return h


def effective_column(a, phi_s, phi_parent, i):
    """``mean(a (grad phi_s + phi_parent e_i))``."""
    d = a.shape[0]
    v = matvec(a, gradient(phi_s)) + a[:, i] * phi_parent
    v = v.reshape(d, -1)
    # centre on one cell value first so a constant field averages to itself exactly
    ref = v[:, :1]
    return ref[:, 0] + (v - ref).mean(axis=1)


def effective_coeff(h: CorrectorHierarchy, n: int):
    """Effective tensors of level ``n`` as an array of shape ``(d,)*(n-1) + (d, d)``.

    Entry ``[s..., k, i]`` is ``e_k . abar^n_s e_i``; entries that were not
    computed (partial builds) are NaN.
    """
    d = h.d
    out = np.full((d,) * (n - 1) + (d, d), np.nan)
    for s, A in h.abar.get(n, {}).items():
        out[s] = A
    return out


def flux_corrector(q: np.ndarray, tol: float = DEFAULT_TOL, scale: float | None = None) -> np.ndarray:
    """Skew matrix field ``sigma`` with ``(div sigma)_j = q_j - mean(q_j)``.

    ``sigma_jk = D_k u_j - D_j u_k`` with ``laplacian(u_j) = q_j - mean(q_j)``;
    the divergence is taken with backward differences (``adjoint_div`` per row).
    The identity is exact when ``adjoint_div(q) == 0``; a divergence larger than
    the solver tolerance (relative to ``scale``) raises FluxCorrectorError.
    """
    d = q.shape[0]
    shape = q.shape[1:]
    divq = adjoint_div(q)
    ref = scale if scale else max(float(np.linalg.norm(q)), 1e-300)
    if np.linalg.norm(divq) > max(100 * tol, 1e-13) * ref:
        raise FluxCorrectorError(
            f"flux has divergence {np.linalg.norm(divq):.3e} (scale {ref:.3e}); inconsistent corrector solve")
    m, lap = diff_symbols(shape)
    den = -lap.copy()
    den.flat[0] = 1.0
    uh = rfft(q, d=len(shape)) / den
    uh[(slice(None),) + (0,) * len(shape)] = 0.0
    sigma = np.zeros((d, d) + shape)
    for j in range(d):
        for k in range(j + 1, d):
            s = irfft(m[k] * uh[j] - m[j] * uh[k], shape)
            sigma[j, k] = s
            sigma[k, j] = -s
    return sigma


def sigma_divergence(sigma: np.ndarray) -> np.ndarray:
    """Row-wise backward divergence ``(div sigma)_j = sum_k Dbar_k sigma_jk``."""
    d = sigma.shape[0]
    return np.stack([adjoint_div(sigma[j]) for j in range(d)])


def build_hierarchy(a: np.ndarray, depth: int | None = None, tol: float = DEFAULT_TOL,
                    maxiter: int = DEFAULT_MAXITER, dual: bool = True, first=None,
                    top_flux: bool = True) -> CorrectorHierarchy:
    """Build levels ``1..depth`` (default ``ceil(d/2)``) and optionally the dual.

    The dual hierarchy is built from the transposed field; for symmetric ``a``
    it is the same object.  ``top_flux=False`` skips the flux correctors of the
    deepest level, which nothing downstream of the commutator needs.
    """
    d = a.shape[0]
    nmax = max_depth(d)
    depth = nmax if depth is None else depth
    if not 1 <= depth <= nmax:
        raise ValueError(f"hierarchy depth must lie in 1..{nmax} for d={d}")
    h = CorrectorHierarchy(a=a, depth=depth, tol=tol)
    for n in range(1, depth + 1):
        build_level(h, n, first=first, tol=tol, maxiter=maxiter,
                    with_flux=top_flux or n < depth)
    if dual:
        at = transpose_field(a)
        if np.array_equal(at, a):
            h.dual = h
        else:
            h.dual = build_hierarchy(at, depth, tol, maxiter, dual=False, top_flux=top_flux)
            h.dual.dual = h
    return h


def commutator_hierarchy(a: np.ndarray, n: int | None = None, primal=None, dual=None,
                         tol: float = DEFAULT_TOL, maxiter: int = DEFAULT_MAXITER,
                         top_flux: bool = False) -> CorrectorHierarchy:
    """Only what ``Xi^{o,n}`` (and, with ``top_flux``, the h equation) needs.

    Primal: first-order correctors ``phi_i`` for ``i`` in ``primal``.  Dual:
    levels ``1..n`` of the transposed field for strings starting with an index
    in ``dual``.  ``None`` means all indices.  For symmetric ``a`` both roles
    are played by one hierarchy.
    """
    d = a.shape[0]
    n = max_depth(d) if n is None else n
    at = transpose_field(a)
    if np.array_equal(at, a):
        idx = None if primal is None or dual is None else sorted(set(primal) | set(dual))
        h = build_hierarchy(a, n, tol, maxiter, dual=False, first=idx, top_flux=top_flux)
        h.dual = h
        return h
    h = build_hierarchy(a, 1, tol, maxiter, dual=False, first=primal, top_flux=False)
    hd = build_hierarchy(at, n, tol, maxiter, dual=False, first=dual, top_flux=top_flux)
    h.dual, hd.dual = hd, h
    return h


def flux_identity_residual(h: CorrectorHierarchy, s) -> float:
    """Max cellwise ``|div(sigma_s) - (q_s - mean q_s)|``."""
    s = tuple(s)
    a = h.a
    d = h.d
    p, i = s[:-1], s[-1]
    q = matvec(a, gradient(h.phi[s])) + level_flux(a, h.phi_of(p), h.sigma_of(p), i)
    q -= q.reshape(d, -1).mean(axis=1).reshape((d,) + (1,) * d)
    return float(np.max(np.abs(sigma_divergence(h.sigma[s]) - q)))


def corrector_relation_check(h: CorrectorHierarchy, k: int) -> float:
    """Max cellwise residual of
    ``(a phi_{s'} - sigma_{s'}) e_i = -a grad phi_s + div sigma_s + abar^k_{s'} e_i``
    over all level-``k`` strings ``s = s' + (i,)``.

    The sign of the effective term is the one forced by the flux-corrector
    equation; for ``k = 1`` this is ``(a - abar) e_i = -a grad phi_i + div sigma_i``.
    """
    a = h.a
    d = h.d
    worst = 0.0
    for s in h.strings(k):
        p, i = s[:-1], s[-1]
        lhs = level_flux(a, h.phi_of(p), h.sigma_of(p), i)
        rhs = (-matvec(a, gradient(h.phi[s])) + sigma_divergence(h.sigma[s])
               + h.abar[k][p][:, i].reshape((d,) + (1,) * d))
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def skew_defect(h: CorrectorHierarchy) -> float:
    return max((float(np.max(np.abs(S + S.swapaxes(0, 1)))) for S in h.sigma.values()),
               default=0.0)


# -- moment statistics -------------------------------------------------------

@dataclass
class MomentStats:
    """Empirical moments of correctors versus torus size."""

    d: int
    records: list  # dicts: M, level, quantity, p, value, stderr
    exponents: dict  # (level, quantity, p) -> fitted growth exponent

    def series(self, level, quantity, p):
        rows = [r for r in self.records
                if r["level"] == level and r["quantity"] == quantity and r["p"] == p]
        rows.sort(key=lambda r: r["M"])
        return (np.array([r["M"] for r in rows], dtype=float),
                np.array([r["value"] for r in rows]), np.array([r["stderr"] for r in rows]))


def envelope(d: int, n: int, r):
    """Pointwise growth envelope of the level-``n`` correctors at distance ``r``."""
    r = np.asarray(r, dtype=float)
    nt = max_depth(d)
    if n < nt:
        return np.ones_like(r)
    if d % 2 == 0:
        return np.sqrt(np.log(2.0 + r))
    return 1.0 + np.sqrt(r)


_QUANTITIES = ("grad_phi", "phi", "sigma")


def _sample_moments(args):
    spec, index, depth, ps, tol = args
    a = sample_coefficient(spec, index)
    h = build_hierarchy(a, depth, tol=tol, dual=False, top_flux=True)
    out = {}
    for n in range(1, depth + 1):
        strings = h.strings(n)
        gp2 = sum(np.sum(gradient(h.phi[s]) ** 2, axis=0) for s in strings)
        p2 = sum(h.phi[s] ** 2 for s in strings)
        s2 = sum(np.sum(h.sigma[s] ** 2, axis=(0, 1)) for s in strings)
        for name, sq in zip(_QUANTITIES, (gp2, p2, s2)):
            for p in ps:
                out[(n, name, p)] = float(np.mean(sq ** (p / 2)))
    return out


def moment_scan(spec: EnsembleSpec, sizes, samples: int, ps=(2, 4), tol: float = 1e-8,
                workers: int | None = None) -> MomentStats:
    """Moments ``<|X|^p>^{1/p}`` of ``grad phi^n``, ``phi^n``, ``sigma^n`` for each torus side.

    ``|X|`` is the Euclidean norm over all strings of a level (and matrix
    entries for sigma); spatial averages over the torus are used per sample
    (stationarity), then averaged over ``samples`` independent samples.
    """
    from .fitting import fit_power_law

    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ValueError("sizes must be ascending")
    d = spec.grid.d
    depth = max_depth(d)
    records = []
    for M in sizes:
        sub = EnsembleSpec(TorusGrid(d, M), spec.covariance, spec.cmap, spec.seed + M)
        res = map_samples(_sample_moments, [(sub, k, depth, tuple(ps), tol) for k in range(samples)],
                          workers=workers)
        for key in res[0]:
            vals = np.array([r[key] for r in res])
            n, name, p = key
            m = vals.mean()
            se = vals.std(ddof=1) / np.sqrt(len(vals))
            value = m ** (1.0 / p)
            records.append(dict(M=M, level=n, quantity=name, p=p, value=value,
                                stderr=se * value / (p * m) if m > 0 else 0.0,
                                raw=m, raw_stderr=se))
    stats = MomentStats(d, records, {})
    for n in range(1, depth + 1):
        for name in _QUANTITIES:
            for p in ps:
                x, y, e = stats.series(n, name, p)
                if len(x) >= 3 and np.all(y > 0):
                    stats.exponents[(n, name, p)] = fit_power_law(x, y, e).slope
    return stats
