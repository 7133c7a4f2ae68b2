"""Periodic lattice and discrete calculus on the torus.

Fields are plain numpy arrays on a torus of side ``M`` in ``d`` dimensions:

* scalar field: shape ``(M,)*d``
* vector field: shape ``(d,) + (M,)*d``
* matrix field: shape ``(d, d) + (M,)*d``

Lattice spacing is 1. The gradient is the forward difference
``(D_k u)(x) = u(x + e_k) - u(x)`` and the divergence is its negative adjoint,
``(div F)(x) = sum_k F_k(x) - F_k(x - e_k)``, so that
``sum(u * div(F)) == -sum(grad(u) * F)`` holds exactly.  Axes are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sfft


@dataclass(frozen=True)
class TorusGrid:
    """Periodic lattice ``(Z / M Z)^d`` with unit spacing."""

    d: int
    M: int

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.d}")
        if self.M < 8 or self.M & (self.M - 1):
            raise ValueError(f"side must be a power of two >= 8, got {self.M}")
        if self.M ** self.d * 8 > 2 ** 40:
            raise ValueError("grid does not fit in memory budget")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.M,) * self.d

    @property
    def size(self) -> int:
        return self.M ** self.d

    @property
    def dtilde(self) -> int:
        """Corrector depth used throughout: 1 for d=2, 2 for d=3 (``ceil(d/2)``)."""
        return (self.d + 1) // 2

    def offsets(self, center=None) -> np.ndarray:
        """Minimal-image displacement ``x - center`` for every cell, shape (d, M, ...)."""
        idx = np.indices(self.shape, dtype=float)
        if center is None:
            center = np.zeros(self.d)
        c = np.asarray(center, dtype=float).reshape((self.d,) + (1,) * self.d)
        r = idx - c
        return r - self.M * np.round(r / self.M)

    def radius(self, center=None) -> np.ndarray:
        """Minimal-image distance to ``center`` for every cell."""
        return np.sqrt(np.sum(self.offsets(center) ** 2, axis=0))

    @classmethod
    def of(cls, u: np.ndarray, lead: int = 0) -> "TorusGrid":
        """Infer the grid from a field with ``lead`` component axes."""
        shape = u.shape[lead:]
        return cls(len(shape), shape[0])


def _check_axis(u, axis):
    if not 0 <= axis < u.ndim:
        raise ValueError(f"axis {axis} out of range for a {u.ndim}-dimensional field")


def forward_diff(u: np.ndarray, axis: int) -> np.ndarray:
    """``u(x + e_axis) - u(x)`` with periodic wraparound."""
    _check_axis(u, axis)
    return np.roll(u, -1, axis=axis) - u


def backward_diff(u: np.ndarray, axis: int) -> np.ndarray:
    """``u(x) - u(x - e_axis)`` with periodic wraparound."""
    _check_axis(u, axis)
    return u - np.roll(u, 1, axis=axis)


def shift(u: np.ndarray, axis: int, steps: int = 1) -> np.ndarray:
    """``(S u)(x) = u(x + steps * e_axis)``."""
    return np.roll(u, -steps, axis=axis)


def gradient(u: np.ndarray) -> np.ndarray:
    """Forward-difference gradient, shape ``(d,) + u.shape``."""
    return np.stack([forward_diff(u, k) for k in range(u.ndim)])


def adjoint_div(F: np.ndarray) -> np.ndarray:
    """Backward-difference divergence of a vector field ``F`` of shape (d, ...)."""
    d = F.shape[0]
    if F.ndim != d + 1:
        raise ValueError(f"vector field shape {F.shape} inconsistent with {d} components")
    out = backward_diff(F[0], 0)
    for k in range(1, d):
        out += backward_diff(F[k], k)
    return out


def laplacian(u: np.ndarray) -> np.ndarray:
    """Periodic (2d+1)-point Laplacian ``div(grad u)``."""
    return adjoint_div(gradient(u))


def iterated_partial(u: np.ndarray, idx=()) -> np.ndarray:
    """Composition of forward differences along the axes listed in ``idx``.

    The empty index is the identity.  Discrete partials commute, so the order
    of ``idx`` does not matter.
    """
    out = u
    for k in idx:
        out = forward_diff(out, k)
    return out


def iterated_backward(u: np.ndarray, idx=()) -> np.ndarray:
    """Composition of backward differences along ``idx``."""
    out = u
    for k in idx:
        out = backward_diff(out, k)
    return out


def fourier_transform(u: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Unitary d-dimensional DFT of a lattice field (complex output)."""
    if inverse:
        return sfft.ifftn(u, norm="ortho")
    return sfft.fftn(u, norm="ortho")


@lru_cache(maxsize=32)
def _rsymbols(shape: tuple[int, ...]):
    d = len(shape)
    m = []
    for k, n in enumerate(shape):
        if k == d - 1:
            kappa = 2 * np.pi * np.arange(n // 2 + 1) / n
        else:
            kappa = 2 * np.pi * sfft.fftfreq(n)
        s = [1] * d
        s[k] = kappa.size
        m.append((np.exp(1j * kappa) - 1.0).reshape(s))
    lap = sum(np.abs(mk) ** 2 for mk in m)
    lap = np.broadcast_to(lap, _rshape(shape)).copy()
    return tuple(m), lap


def _rshape(shape):
    return shape[:-1] + (shape[-1] // 2 + 1,)


def diff_symbols(shape: tuple[int, ...]):
    """Fourier symbols for the real-FFT layout.

    Returns ``(m, lap)`` where ``m[k] = exp(i kappa_k) - 1`` is the symbol of
    ``forward_diff`` along axis ``k`` (broadcastable) and ``lap = sum |m_k|^2``
    is the symbol of the negative Laplacian.  Backward differences have symbol
    ``-conj(m[k])``.
    """
    return _rsymbols(tuple(shape))


def rfft(u: np.ndarray, d: int | None = None) -> np.ndarray:
    """Real FFT over the trailing ``d`` lattice axes (default: all axes)."""
    d = u.ndim if d is None else d
    return sfft.rfftn(u, axes=tuple(range(-d, 0)))


def irfft(uh: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    d = len(shape)
    return sfft.irfftn(uh, s=shape, axes=tuple(range(-d, 0)))
