"""Local linearizations of smooth scalar functions.

Compares a tangent plane with free slopes against one whose slopes are tied
by ``dz/dy = -dz/dx`` (the structure of the classical inverse-Jacobian law),
and approximates a 1-D curve with several tangent lines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FD_STEP = 1e-6

# demo surface and grid around (-2, 1)
DEMO_POINT = (-2.0, 1.0)
DEMO_X = (-2.4, -2.2, -2.0, -1.8, -1.6)
DEMO_Y = (0.6, 0.8, 1.0, 1.2, 1.4)


def demo_surface(x, y):
    return -(np.asarray(x) ** 2 + np.asarray(y) ** 2) / 6.0


def demo_gradient(x, y):
    return -x / 3.0, -y / 3.0


@dataclass(frozen=True)
class PlaneApprox:
    cx: float
    cy: float
    c0: float
    x0: float
    y0: float

    def __call__(self, x, y):
        return self.cx * np.asarray(x) + self.cy * np.asarray(y) + self.c0


def gradient(f, x0, y0, grad=None, h=FD_STEP):
    """Analytic gradient when supplied, else central differences."""
    if grad is not None:
        gx, gy = grad(x0, y0)
    else:
        gx = (f(x0 + h, y0) - f(x0 - h, y0)) / (2 * h)
        gy = (f(x0, y0 + h) - f(x0, y0 - h)) / (2 * h)
    gx, gy = float(gx), float(gy)
    if not (np.isfinite(gx) and np.isfinite(gy)):
        raise ValueError(f"non-finite gradient ({gx}, {gy}) at ({x0}, {y0})")
    return gx, gy


def _through_point(f, x0, y0, cx, cy) -> PlaneApprox:
    z0 = float(f(x0, y0))
    return PlaneApprox(cx, cy, z0 - cx * x0 - cy * y0, float(x0), float(y0))


def tangent_plane_independent(f, x0, y0, grad=None) -> PlaneApprox:
    gx, gy = gradient(f, x0, y0, grad)
    return _through_point(f, x0, y0, gx, gy)


def tangent_plane_coupled(f, x0, y0, grad=None) -> PlaneApprox:
    """Plane with slopes ``(c, -c)``, ``c`` the least-squares fit to the gradient."""
    gx, gy = gradient(f, x0, y0, grad)
    c = (gx - gy) / 2.0
    return _through_point(f, x0, y0, c, -c)


def grid_errors(plane: PlaneApprox, f, xs, ys) -> np.ndarray:
    """Absolute errors on the grid, shape ``(len(xs), len(ys))``."""
    X, Y = np.meshgrid(np.asarray(xs, float), np.asarray(ys, float), indexing="ij")
    if X.size == 0:
        raise ValueError("grids must be nonempty")
    return np.abs(f(X, Y) - plane(X, Y))


def grid_mae(plane: PlaneApprox, f, xs, ys) -> float:
    return float(grid_errors(plane, f, xs, ys).mean())


@dataclass(frozen=True)
class PiecewiseLinear:
    xs: np.ndarray  # tangent points
    slopes: np.ndarray
    intercepts: np.ndarray
    max_error: float

    def nearest(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        return np.abs(x[..., None] - self.xs).argmin(axis=-1)

    def __call__(self, x):
        i = self.nearest(x)
        return self.slopes[i] * np.asarray(x, float) + self.intercepts[i]


def piecewise_linear_1d(f, xs, interval=None, df=None, n_eval=2001, h=FD_STEP):
    """Tangent lines at ``xs``; each point uses the tangent of its nearest sample.

    ``max_error`` is the largest absolute error on ``n_eval`` equispaced points
    of ``interval`` (default: the span of ``xs``).
    """
    xs = np.sort(np.asarray(xs, float))
    lo, hi = (xs[0], xs[-1]) if interval is None else interval
    if not hi > lo:
        raise ValueError(f"empty interval [{lo}, {hi}]")
    if xs.size < 2:
        raise ValueError("need at least 2 tangent points")
    if df is not None:
        slopes = np.asarray(df(xs), float)
    else:
        slopes = (f(xs + h) - f(xs - h)) / (2 * h)
    intercepts = f(xs) - slopes * xs
    grid = np.linspace(lo, hi, n_eval)
    pl = PiecewiseLinear(xs, slopes, intercepts, 0.0)
    err = float(np.max(np.abs(f(grid) - pl(grid))))
    return PiecewiseLinear(xs, slopes, intercepts, err)


def demo_table():
    """Grid MAE of both planes on the demo surface; returns (independent, coupled, rows).

    ``rows`` holds ``(x, y, z, err_independent, err_coupled)`` per grid point.
    """
    x0, y0 = DEMO_POINT
    ind = tangent_plane_independent(demo_surface, x0, y0, demo_gradient)
    cpl = tangent_plane_coupled(demo_surface, x0, y0, demo_gradient)
    ei = grid_errors(ind, demo_surface, DEMO_X, DEMO_Y)
    ec = grid_errors(cpl, demo_surface, DEMO_X, DEMO_Y)
    rows = [
        (x, y, float(demo_surface(x, y)), float(ei[i, j]), float(ec[i, j]))
        for i, x in enumerate(DEMO_X)
        for j, y in enumerate(DEMO_Y)
    ]
    return float(ei.mean()), float(ec.mean()), rows
