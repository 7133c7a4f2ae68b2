"""Higher-order homogenization commutators.

``commutator_apply`` evaluates

    Xi^n[grad w] = (a - abar^1) grad w - sum_{k=2..n} abar^k_{s} d^{k-1}_{s} grad w

and ``standard_commutator`` the scalar fields

    Xi^{o,n}_{ij} = e_j.(a - abar^1)(grad phi_i + e_i)
                    - sum_{k=2..n} (-1)^{k-1} abar^{*,k}_{j i_1..i_{k-2}} e_{i_{k-1}} . d^{k-1}_{i_1..i_{k-1}} grad phi_i

where starred tensors come from the hierarchy of the transposed field.
Iterated derivatives are forward differences, the stencil of the solver.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .correctors import CorrectorHierarchy, build_hierarchy, max_depth
from .elliptic import matvec
from .ensemble import EnsembleSpec, sample_coefficient
from .grid import gradient, iterated_partial
from .parallel import map_samples


def _check_order(h: CorrectorHierarchy, n: int, dual_only: bool = False):
    depth = h.dual.depth if dual_only and h.dual is not None else h.depth
    if not 1 <= n <= min(depth, max_depth(h.d)):
        raise ValueError(f"commutator order {n} outside 1..{depth}")


def _strings(d, k):
    return itertools.product(range(d), repeat=k)


def commutator_apply(h: CorrectorHierarchy, n: int, grad_w: np.ndarray) -> np.ndarray:
    """``Xi^n[grad w]`` as a vector field."""
    _check_order(h, n)
    d = h.d
    ab1 = h.abar[1][()]
    out = matvec(h.a, grad_w) - np.einsum("kl,l...->k...", ab1, grad_w)
    for k in range(2, n + 1):
        for s in _strings(d, k - 1):
            A = h.abar[k][s]
            dw = np.stack([iterated_partial(grad_w[l], s) for l in range(d)])
            out -= np.einsum("kl,l...->k...", A, dw)
    return out


def _dual_vector(hd: CorrectorHierarchy, k: int, j: int, t):
    """``abar^{*,k}_{j t[:-1]} e_{t[-1]}`` (``abar^{*,1} e_j`` for ``k = 1``)."""
    if k == 1:
        return hd.abar[1][()][:, j]
    return hd.abar[k][(j,) + tuple(t[:-1])][:, t[-1]]


def _dual(h: CorrectorHierarchy) -> CorrectorHierarchy:
    if h.dual is None:
        raise ValueError("dual hierarchy required (build_hierarchy(..., dual=True))")
    return h.dual


def commutator_transposed(h: CorrectorHierarchy, n: int, grad_w: np.ndarray, j: int) -> np.ndarray:
    """``e_j . Xi^n[grad w]`` through the transposed representation

    ``a^* e_j . grad w - sum_{k=1..n} (-1)^{k-1} abar^{*,k}_{j i..} e_{i_{k-1}} . d^{k-1} grad w``.
    """
    _check_order(h, n)
    hd = _dual(h)
    d = h.d
    out = sum(h.a[j, l] * grad_w[l] for l in range(d))
    for k in range(1, n + 1):
        sign = (-1) ** (k - 1)
        for t in _strings(d, k - 1):
            c = _dual_vector(hd, k, j, t)
            for l in range(d):
                if c[l] != 0.0:
                    out = out - sign * c[l] * iterated_partial(grad_w[l], t)
    return out


@dataclass
class CommutatorField:
    """Standard commutator fields ``Xi^{o,n}_{ij}`` of one sample."""

    order: int
    xi: dict = field(default_factory=dict)
    hierarchy: CorrectorHierarchy | None = None

    def __getitem__(self, ij):
        return self.xi[tuple(ij)]

    def as_array(self) -> np.ndarray:
        d = self.hierarchy.d
        shape = next(iter(self.xi.values())).shape
        out = np.full((d, d) + shape, np.nan)
        for (i, j), v in self.xi.items():
            out[i, j] = v
        return out


def standard_component(h: CorrectorHierarchy, n: int, i: int, j: int) -> np.ndarray:
    """``Xi^{o,n}_{ij}``; needs ``phi_i`` and the dual tensors up to order ``n``."""
    _check_order(h, n, dual_only=n > 1)
    d = h.d
    gphi = gradient(h.phi[(i,)])
    gw = gphi.copy()
    gw[i] += 1.0
    row = h.abar[1][()][j]
    if np.isnan(row).any():
        # partial build: e_j . abar^1 = abar^{*,1} e_j from the dual
        row = _dual(h).abar[1][()][:, j]
        if np.isnan(row).any():
            raise ValueError(f"effective row {j} unavailable; build corrector {j} of the dual")
    out = sum((h.a[j, l] - row[l]) * gw[l] for l in range(d))
    if n >= 2:
        hd = _dual(h)
        for k in range(2, n + 1):
            sign = (-1) ** (k - 1)
            for t in _strings(d, k - 1):
                c = _dual_vector(hd, k, j, t)
                for l in range(d):
                    if c[l] != 0.0:
                        out = out - sign * c[l] * iterated_partial(gphi[l], t)
    return out


def standard_commutator(h: CorrectorHierarchy, n: int, pairs=None) -> CommutatorField:
    """``Xi^{o,n}_{ij}`` for every ``(i, j)`` in ``pairs`` (default: all)."""
    _check_order(h, n, dual_only=n > 1)
    if n >= 2:
        hd = _dual(h)
        if any(k not in hd.abar for k in range(2, n + 1)):
            raise ValueError("dual effective coefficients missing up to the requested order")
    d = h.d
    pairs = list(itertools.product(range(d), repeat=2)) if pairs is None else [tuple(p) for p in pairs]
    cf = CommutatorField(order=n, hierarchy=h)
    for i, j in pairs:
        if (i,) not in h.phi:
            raise ValueError(f"first-order corrector {i} not built")
        cf.xi[(i, j)] = standard_component(h, n, i, j)
    return cf


# -- symmetry relation ---------------------------------------------------------

def _sym(T: np.ndarray, axes) -> np.ndarray:
    """Average of ``T`` over all permutations of ``axes``."""
    axes = list(axes)
    out = np.zeros_like(T)
    perms = list(itertools.permutations(axes))
    base = list(range(T.ndim))
    for p in perms:
        order = base.copy()
        for src, dst in zip(axes, p):
            order[src] = dst
        out += np.transpose(T, order)
    return out / len(perms)


def symmetry_tensors(h: CorrectorHierarchy, n: int):
    """``(T, T*)`` with ``T[j, i_1..i_n] = e_j . abar^n_{i_1..i_{n-1}} e_{i_n}`` and
    ``T*[j, i_1..i_n] = e_{i_n} . abar^{*,n}_{j i_1..i_{n-2}} e_{i_{n-1}}``
    (``e_{i_1} . abar^{*,1} e_j`` for ``n = 1``)."""
    d = h.d
    hd = _dual(h)
    T = np.zeros((d,) * (n + 1))
    Ts = np.zeros((d,) * (n + 1))
    for idx in _strings(d, n + 1):
        j, ii = idx[0], idx[1:]
        T[idx] = h.abar[n][ii[:-1]][j, ii[-1]]
        if n == 1:
            Ts[idx] = hd.abar[1][()][ii[0], j]
        else:
            Ts[idx] = hd.abar[n][(j,) + ii[:-2]][ii[-1], ii[-2]]
    return T, Ts


def symmetry_defect(h: CorrectorHierarchy, n: int) -> np.ndarray:
    """``Sym(T) - (-1)^{n+1} Sym(T*)`` symmetrized over ``i_1..i_n``."""
    T, Ts = symmetry_tensors(h, n)
    ax = range(1, n + 1)
    return _sym(T, ax) - (-1) ** (n + 1) * _sym(Ts, ax)


@dataclass
class SymmetryResult:
    order: int
    mean: np.ndarray
    stderr: np.ndarray
    samples: int
    max_abs: float  # largest per-sample defect entry
    scale: float = 1.0  # size of the tensors compared
    cells: int = 1

    @property
    def resolution(self) -> float:
        """Roundoff level of a torus average of O(1) summands, ``eps * sqrt(cells)``."""
        return float(np.finfo(float).eps * np.sqrt(self.cells))

    @property
    def max_z(self) -> float:
        """Largest ``|mean| / stderr``.  The defect vanishes per sample up to
        roundoff, so standard errors are floored at ``resolution``."""
        se = np.maximum(self.stderr, self.resolution)
        return float(np.max(np.abs(self.mean) / se))


def _sample_defect(args):
    spec, index, n, tol = args
    a = sample_coefficient(spec, index)
    h = build_hierarchy(a, n, tol=tol, dual=True, top_flux=False)
    T, _ = symmetry_tensors(h, n)
    return symmetry_defect(h, n), float(np.max(np.abs(T)))


def symmetry_check(spec: EnsembleSpec, n: int, samples: int, tol: float = 1e-9,
                   workers: int | None = None) -> SymmetryResult:
    """Monte Carlo estimate of the signed symmetrized defect between primal and dual tensors."""
    if not 1 <= n <= max_depth(spec.grid.d):
        raise ValueError("order out of range")
    res = map_samples(_sample_defect, [(spec, k, n, tol) for k in range(samples)], workers)
    D = np.array([r[0] for r in res])
    scale = max(max(r[1] for r in res), 1e-300)
    se = D.std(axis=0, ddof=1) / np.sqrt(samples) if samples > 1 else np.zeros(D.shape[1:])
    return SymmetryResult(n, D.mean(axis=0), se, samples, float(np.max(np.abs(D))), scale,
                          spec.grid.size)
