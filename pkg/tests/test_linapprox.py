import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adapj.linapprox import (
    DEMO_X,
    DEMO_Y,
    demo_gradient,
    demo_surface,
    demo_table,
    grid_mae,
    piecewise_linear_1d,
    tangent_plane_coupled,
    tangent_plane_independent,
)

coord = st.floats(-5, 5)


def plane_tuple(p):
    return (p.cx, p.cy, p.c0)


@pytest.mark.parametrize("grad", [demo_gradient, None])
def test_independent_plane_demo(grad):
    p = tangent_plane_independent(demo_surface, -2.0, 1.0, grad)
    tol = 1e-12 if grad else 1e-8
    np.testing.assert_allclose(plane_tuple(p), (2 / 3, -1 / 3, 5 / 6), atol=tol)


@pytest.mark.parametrize("grad", [demo_gradient, None])
def test_coupled_plane_demo(grad):
    p = tangent_plane_coupled(demo_surface, -2.0, 1.0, grad)
    tol = 1e-12 if grad else 1e-8
    np.testing.assert_allclose(plane_tuple(p), (1 / 2, -1 / 2, 2 / 3), atol=tol)


def test_constant_function():
    p = tangent_plane_independent(lambda x, y: 3.0 + 0 * x, 1.0, 2.0)
    np.testing.assert_allclose(plane_tuple(p), (0, 0, 3.0), atol=1e-9)


def test_identity_in_x():
    p = tangent_plane_independent(lambda x, y: x + 0 * y, 0.7, -1.3)
    np.testing.assert_allclose(plane_tuple(p), (1, 0, 0), atol=1e-9)


def test_coupled_on_sum_is_flat():
    p = tangent_plane_coupled(lambda x, y: x + y, 1.0, 2.0, lambda x, y: (1.0, 1.0))
    assert (p.cx, p.cy) == (0.0, 0.0)
    assert p.c0 == 3.0


def test_constraint_inactive_matches_independent():
    f = lambda x, y: np.sin(x - y)  # noqa: E731
    a = tangent_plane_independent(f, 0.3, -0.2)
    b = tangent_plane_coupled(f, 0.3, -0.2)
    np.testing.assert_allclose(plane_tuple(a), plane_tuple(b), atol=1e-9)


def test_non_finite_gradient():
    with pytest.raises(ValueError, match="non-finite"):
        tangent_plane_independent(lambda x, y: x, 0.0, 0.0, lambda x, y: (np.nan, 0.0))


@given(coord, coord)
def test_planes_pass_through_base_point(x0, y0):
    for make in (tangent_plane_independent, tangent_plane_coupled):
        p = make(demo_surface, x0, y0, demo_gradient)
        assert p(x0, y0) == pytest.approx(demo_surface(x0, y0), abs=1e-12)


def test_grid_mae_closed_form():
    # independent error is ((x+2)^2 + (y-1)^2)/6; coupled adds the slope mismatch
    dx = np.array(DEMO_X) + 2
    dy = np.array(DEMO_Y) - 1
    DX, DY = np.meshgrid(dx, dy, indexing="ij")
    ind = np.mean((DX**2 + DY**2) / 6)
    cpl = np.mean(np.abs((DX - DX**2) + (DY - DY**2)) / 6)
    assert ind == pytest.approx(0.16 / 6, abs=1e-15)
    assert cpl == pytest.approx(8.8 / 25 / 6, abs=1e-15)
    a, b, rows = demo_table()
    assert a == pytest.approx(ind, abs=1e-12)
    assert b == pytest.approx(cpl, abs=1e-12)
    assert len(rows) == 25


def test_independent_beats_coupled():
    a, b, _ = demo_table()
    assert a <= b


def test_grid_mae_zero_for_linear():
    f = lambda x, y: 2 * x - y + 1  # noqa: E731
    p = tangent_plane_independent(f, 0.0, 0.0, lambda x, y: (2.0, -1.0))
    assert grid_mae(p, f, DEMO_X, DEMO_Y) == pytest.approx(0.0, abs=1e-12)


def test_grid_mae_empty():
    p = tangent_plane_independent(demo_surface, 0, 0)
    with pytest.raises(ValueError):
        grid_mae(p, demo_surface, [], [1.0])


def test_piecewise_error_decreases():
    f = lambda x: -(x**2 + 1) / 6  # noqa: E731
    errs = [piecewise_linear_1d(f, np.linspace(-3, 3, k), df=lambda x: -x / 3).max_error
            for k in (3, 5, 7)]
    assert errs[0] > errs[1] > errs[2]
    # nearest-tangent error on a parabola peaks midway: (h/2)^2 / 6 for spacing h
    for k, e in zip((3, 5, 7), errs):
        h = 6 / (k - 1)
        assert e == pytest.approx((h / 2) ** 2 / 6, rel=1e-6)


@pytest.mark.parametrize("k", [2, 3, 9])
def test_piecewise_exact_for_linear(k):
    pl = piecewise_linear_1d(lambda x: 0.5 * x - 2, np.linspace(-1, 1, k))
    assert pl.max_error < 1e-9


def test_nearest_sample_stable_under_refinement():
    xs = np.linspace(-3, 3, 5)
    pl = piecewise_linear_1d(lambda x: x**2, xs)
    assert np.array_equal(pl.nearest(xs), np.arange(5))
    fine = np.linspace(-3, 3, 17)
    coarse = np.linspace(-3, 3, 9)
    assert np.array_equal(pl.nearest(fine[::2]), pl.nearest(coarse))


def test_piecewise_errors():
    with pytest.raises(ValueError):
        piecewise_linear_1d(lambda x: x, [0.0, 1.0], interval=(1.0, 1.0))
    with pytest.raises(ValueError):
        piecewise_linear_1d(lambda x: x, [0.0], interval=(0.0, 1.0))
