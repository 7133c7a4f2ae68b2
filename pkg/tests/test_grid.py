import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from commlab.grid import (TorusGrid, adjoint_div, backward_diff, diff_symbols, forward_diff,
                          gradient, irfft, iterated_backward, iterated_partial, laplacian, rfft,
                          shift)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
fields2 = arrays(np.float64, (8, 8), elements=finite)
fields3 = arrays(np.float64, (8, 8, 8), elements=finite)


@pytest.mark.parametrize("d,M", [(1, 8), (4, 8), (2, 6), (2, 4), (3, 12)])
def test_grid_rejects_bad_sizes(d, M):
    with pytest.raises(ValueError):
        TorusGrid(d, M)


def test_grid_basics():
    g = TorusGrid(3, 16)
    assert g.shape == (16, 16, 16) and g.size == 4096
    assert TorusGrid(2, 8).dtilde == 1 and g.dtilde == 2
    r = g.radius()
    assert r[0, 0, 0] == 0 and r[15, 0, 0] == 1 and r[8, 0, 0] == 8


def test_forward_backward_values():
    u = np.arange(8.0)[:, None] * np.ones((1, 8))
    assert np.allclose(forward_diff(u, 0)[:7], 1) and forward_diff(u, 0)[7, 0] == -7
    assert backward_diff(u, 0)[0, 0] == -7
    assert np.array_equal(shift(u, 0)[0], u[1])
    with pytest.raises(ValueError):
        forward_diff(u, 2)


@settings(max_examples=30, deadline=None)
@given(fields2, arrays(np.float64, (2, 8, 8), elements=finite))
def test_summation_by_parts(u, F):
    # sum grad u . F = - sum u div F
    lhs = np.sum(gradient(u) * F)
    rhs = -np.sum(u * adjoint_div(F))
    assert abs(lhs - rhs) <= 1e-10 * (1 + np.abs(gradient(u) * F).sum())


@settings(max_examples=20, deadline=None)
@given(fields3, fields3, finite)
def test_gradient_linear(u, v, c):
    assert np.allclose(gradient(u + c * v), gradient(u) + c * gradient(v), atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(fields3)
def test_partials_commute_and_annihilate_constants(u):
    assert np.allclose(iterated_partial(u, (0, 2)), iterated_partial(u, (2, 0)))
    assert np.allclose(iterated_backward(u, (1, 2)), iterated_backward(u, (2, 1)))
    assert np.allclose(iterated_partial(u, ()), u)
    assert np.allclose(gradient(u + 3.0), gradient(u))


@settings(max_examples=20, deadline=None)
@given(fields2)
def test_laplacian_symbol(u):
    _, lap = diff_symbols(u.shape)
    via_fft = irfft(-lap * rfft(u), u.shape)
    assert np.allclose(laplacian(u), via_fft, atol=1e-9)
    assert abs(laplacian(u).sum()) < 1e-9 * (1 + np.abs(u).sum())


def test_forward_symbol_matches_stencil():
    rng = np.random.default_rng(0)
    u = rng.standard_normal((8, 16))
    m, _ = diff_symbols(u.shape)
    for k in range(2):
        assert np.allclose(irfft(m[k] * rfft(u), u.shape), forward_diff(u, k))


def test_rfft_roundtrip_vector():
    rng = np.random.default_rng(1)
    F = rng.standard_normal((3, 8, 8, 8))
    assert np.allclose(irfft(rfft(F, d=3), F.shape[1:]), F)
