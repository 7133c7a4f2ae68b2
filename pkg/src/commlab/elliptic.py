"""Divergence-form elliptic solves on the torus.

Solves ``-div(a grad u) = div(f)`` for mean-zero ``u`` with a Krylov method
preconditioned by the exact inverse of the constant-coefficient operator built
from the grid average of ``a``.  Symmetric coefficient fields use conjugate
gradients; nonsymmetric ones use BiCGStab.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse import linalg as spla

from .grid import adjoint_div, diff_symbols, irfft, rfft

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-11
DEFAULT_MAXITER = 2000


class ConvergenceError(RuntimeError):
    """Raised by callers that treat a non-converged solve as fatal."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    method: str = "cg"


def matvec(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Pointwise matrix-vector product of a matrix field and a vector field."""
    d = v.shape[0]
    out = np.empty_like(v)
    for k in range(d):
        acc = a[k, 0] * v[0]
        for l in range(1, d):
            acc = acc + a[k, l] * v[l]
        out[k] = acc
    return out


def flux(a: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``a grad u`` with the forward-difference gradient."""
    d = u.ndim
    g = np.stack([np.roll(u, -1, axis=k) - u for k in range(d)])
    return matvec(a, g)


def apply_operator(a: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``-div(a grad u)``."""
    return -adjoint_div(flux(a, u))


def is_symmetric(a: np.ndarray) -> bool:
    d = a.shape[0]
    return all(np.array_equal(a[k, l], a[l, k]) for k in range(d) for l in range(k + 1, d))


def _constant_symbol(abar: np.ndarray, shape):
    """Fourier symbol of ``-div(abar grad .)`` for a constant matrix ``abar``."""
    m, _ = diff_symbols(shape)
    d = len(shape)
    sym = np.zeros(np.broadcast_shapes(*[mk.shape for mk in m]), dtype=complex)
    for k in range(d):
        for l in range(d):
            if abar[k, l] != 0.0:
                sym += abar[k, l] * np.conj(m[k]) * m[l]
    sym.flat[0] = 1.0
    return sym


def constant_solve(abar: np.ndarray, rhs: np.ndarray, symbol=None) -> np.ndarray:
    """Mean-zero solution of ``-div(abar grad u) = rhs`` for constant ``abar``."""
    if symbol is None:
        symbol = _constant_symbol(abar, rhs.shape)
    rh = rfft(rhs)
    rh /= symbol
    rh.flat[0] = 0.0
    return irfft(rh, rhs.shape)


def poisson_solve(rhs: np.ndarray) -> np.ndarray:
    """Mean-zero ``u`` with ``laplacian(u) == rhs`` by division by the lattice symbol."""
    scale = max(float(np.max(np.abs(rhs))), 1e-300)
    if abs(float(np.mean(rhs))) > 1e-12 * scale:
        raise ValueError("poisson_solve needs a right-hand side with zero grid sum")
    _, lap = diff_symbols(rhs.shape)
    rh = rfft(rhs)
    den = lap.copy()
    den.flat[0] = 1.0
    rh /= -den
    rh.flat[0] = 0.0
    return irfft(rh, rhs.shape)


def _pcg(A, b, precond, tol, maxiter, x0=None):
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - A(x)
    z = precond(r)
    p = z.copy()
    rz = np.vdot(r, z)
    it = 0
    while it < maxiter:
        if np.linalg.norm(r) <= tol * bnorm:
            # confirm against the true residual before stopping
            r = b - A(x)
            if np.linalg.norm(r) <= tol * bnorm:
                break
            z = precond(r)
            p = z.copy()
            rz = np.vdot(r, z)
        Ap = A(p)
        alpha = rz / np.vdot(p, Ap)
        x += alpha * p
        r -= alpha * Ap
        it += 1
        z = precond(r)
        rz_new = np.vdot(r, z)
        p *= rz_new / rz
        p += z
        rz = rz_new
    return x, it


def _bicgstab(A, b, precond, tol, maxiter, x0=None):
    shape = b.shape
    n = b.size
    op = spla.LinearOperator((n, n), matvec=lambda v: A(v.reshape(shape)).ravel(), dtype=float)
    pre = spla.LinearOperator((n, n), matvec=lambda v: precond(v.reshape(shape)).ravel(),
                              dtype=float)
    bnorm = np.linalg.norm(b)
    x = None if x0 is None else x0.ravel()
    total = 0
    for _restart in range(4):
        count = [0]

        def cb(_xk):
            count[0] += 1

        x, _info = spla.bicgstab(op, b.ravel(), x0=x, rtol=tol, atol=0.0,
                                 maxiter=maxiter - total, M=pre, callback=cb)
        total += count[0]
        if np.linalg.norm(op.matvec(x) - b.ravel()) <= tol * bnorm or total >= maxiter:
            break
    return x.reshape(shape), total


def solve_div_form(a: np.ndarray, f: np.ndarray, tol: float = DEFAULT_TOL,
                   maxiter: int = DEFAULT_MAXITER, symmetric: bool | None = None,
                   x0: np.ndarray | None = None):
    """Solve ``-div(a grad u) = div(f)`` on the torus.

    Parameters
    ----------
    a : matrix field, shape (d, d, M, ...)
    f : vector field, shape (d, M, ...)
    tol : relative residual target ``|A u - div f| <= tol |div f|`` (Euclidean)
    symmetric : force the method choice; detected from ``a`` when None.

    Returns
    -------
    u : mean-zero scalar field
    report : SolveReport; ``converged`` is False when ``maxiter`` was hit, in
        which case ``u`` is the last iterate.
    """
    b = adjoint_div(f)
    shape = b.shape
    if symmetric is None:
        symmetric = is_symmetric(a)
    abar = a.reshape(a.shape[0], a.shape[1], -1).mean(axis=-1)
    if symmetric:
        abar = 0.5 * (abar + abar.T)
    symbol = _constant_symbol(abar, shape)

    def A(u):
        return apply_operator(a, u)

    def precond(r):
        return constant_solve(abar, r, symbol)

    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(shape), SolveReport(0, 0.0, True, "cg" if symmetric else "bicgstab")

    if symmetric:
        u, iters = _pcg(A, b, precond, tol, maxiter, x0)
        method = "cg"
    else:
        u, iters = _bicgstab(A, b, precond, tol, maxiter, x0)
        method = "bicgstab"

    u -= u.mean()
    residual = float(np.linalg.norm(A(u) - b) / bnorm)
    converged = residual <= tol
    if not converged:
        log.warning("solve did not reach tol %.1e: residual %.2e after %d iterations",
                    tol, residual, iters)
    return u, SolveReport(iters, residual, converged, method)
