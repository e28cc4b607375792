import numpy as np
import pytest

from shapeboost.geometry import (
    CurveSample,
    GeometryKind,
    TangentEvals,
    tangent_project,
    trapezoid_weights,
)


def irregular_grid(rng, k):
    """Strictly increasing irregular grid in [0, 1)."""
    return (np.arange(k) + rng.uniform(0.1, 0.9, k)) / k


def smooth_curve(rng, grid, n_freq=4):
    """Random smooth closed-ish complex curve, generically non-degenerate."""
    v = np.zeros(len(grid), dtype=complex)
    for f in range(1, n_freq + 1):
        v += (rng.normal() + 1j * rng.normal()) * np.exp(2j * np.pi * f * grid) / f
    return v + (rng.normal() + 1j * rng.normal())


def random_pole_and_tangent(rng, kind, k=None, norm=None):
    """(grid, weights, pole evals, TangentEvals) with a valid random tangent."""
    kind = GeometryKind.parse(kind)
    if k is None:
        k = int(rng.integers(3, 120))
    grid = irregular_grid(rng, k)
    w = trapezoid_weights(grid)
    p = smooth_curve(rng, grid)
    raw = smooth_curve(rng, grid) + 0.3 * (rng.normal(size=k) + 1j * rng.normal(size=k))
    beta = tangent_project(raw, p, w, kind, grid)
    n0 = beta.norm()
    if n0 <= 1e-12:
        raw = raw + 1.0 + 1j
        beta = tangent_project(raw, p, w, kind, grid)
        n0 = beta.norm()
    if norm is None:
        if kind is GeometryKind.SHAPE:
            hi = np.pi / 2 - 0.11
        else:
            # stay inside the chart: larger offsets can realign through a
            # rotation and the quotient distance drops below the tangent norm
            from shapeboost.geometry import empirical_norm

            hi = 0.6 * empirical_norm(beta.pole_evals, w)
        norm = rng.uniform(0.05 * hi, hi)
    beta = TangentEvals(grid, beta.values * (norm / n0), beta.pole_evals, kind, w)
    return grid, w, p, beta


def curve_from(vals, grid, w, cid="y"):
    return CurveSample(cid, grid, vals, w)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
