import math

import numpy as np
import pytest

from fluxcascade.field import (FieldError, FieldSequence, Grid, ScalarField, Snapshot, VectorField,
                               divergence, gradient, integrate, laplacian, sample_analytic,
                               velocity_gradient_norm_sq)
from fluxcascade.solver import abc_flow

L3 = (2 * math.pi) ** 3


def test_grid_rejects_bad_sizes():
    with pytest.raises(FieldError):
        Grid(7, 1.0)
    with pytest.raises(FieldError):
        Grid(8, -1.0)


def test_coordinates_centered(grid32):
    ax = grid32.axis
    assert ax[0] == pytest.approx(-math.pi)
    assert ax[16] == pytest.approx(0.0, abs=1e-15)


def test_integrate_constant(grid32):
    assert integrate(ScalarField(grid32, np.ones(grid32.shape))) == pytest.approx(L3, rel=1e-14)


def test_integrate_sin_squared(grid32):
    f = sample_analytic(lambda x, y, z: np.sin(x) ** 2, grid32)
    assert integrate(f) == pytest.approx(L3 / 2, rel=1e-13)


def test_integrate_abc_kinetic_against_finer_grid(grid32):
    # oracle: same integrand on a grid twice as fine
    coarse = abc_flow(grid32)
    fine = abc_flow(Grid(64, 2 * math.pi))
    a = integrate(0.5 * np.sum(coarse.values ** 2, axis=0), grid32)
    b = integrate(0.5 * np.sum(fine.values ** 2, axis=0), fine.grid)
    assert a == pytest.approx(1.5 * L3, rel=1e-12)
    assert a == pytest.approx(b, rel=1e-12)


def test_gradient_single_mode(grid32):
    g = gradient(sample_analytic(lambda x, y, z: np.sin(x), grid32))
    x1, _, _ = grid32.coordinates()
    assert np.abs(g.values[0] - np.cos(x1)).max() < 1e-12
    assert np.abs(g.values[1:]).max() < 1e-12


def test_gradient_of_constant_is_zero(grid32):
    g = gradient(ScalarField(grid32, np.full(grid32.shape, 3.0)))
    assert np.abs(g.values).max() < 1e-12


def test_gradient_product_mode(grid32):
    x, y, _ = grid32.coordinates()
    g = gradient(sample_analytic(lambda x, y, z: np.sin(3 * x) * np.cos(2 * y), grid32))
    assert np.abs(g.values[0] - 3 * np.cos(3 * x) * np.cos(2 * y)).max() < 1e-10
    assert np.abs(g.values[1] + 2 * np.sin(3 * x) * np.sin(2 * y)).max() < 1e-10


def test_divergence_abc(grid32):
    assert np.abs(divergence(abc_flow(grid32, 1.0, 0.7, 0.3)).values).max() < 1e-12


def test_velocity_gradient_norm_shear(grid32):
    v = sample_analytic(lambda x, y, z: (np.sin(y), 0.0, 0.0), grid32)
    gs = velocity_gradient_norm_sq(v)
    _, y, _ = grid32.coordinates()
    assert np.abs(gs.values - np.cos(y) ** 2).max() < 1e-12
    assert integrate(gs) == pytest.approx(L3 / 2, rel=1e-13)


def test_laplacian_sin(grid32):
    x, _, _ = grid32.coordinates()
    lap = laplacian(sample_analytic(lambda x, y, z: np.sin(x), grid32))
    assert np.abs(lap.values + np.sin(x)).max() < 1e-12


def test_sample_uniform_flow():
    # u = (c, c, c) t at c = 1, t = 2
    g = Grid(8, 1.0)
    v = sample_analytic(lambda x, y, z: (2.0, 2.0, 2.0), g)
    assert v.values.shape == (3, 8, 8, 8)
    assert np.all(v.values == 2.0)


def test_sample_zero_and_errors(grid32):
    assert not sample_analytic(lambda x, y, z: 0.0, grid32).values.any()
    with pytest.raises(FieldError):
        sample_analytic(lambda x, y, z: np.log(x - 100), grid32)
    with pytest.raises(FieldError):
        sample_analytic(lambda x, y, z: (x, y), grid32)


def test_nonfinite_rejected(grid32):
    bad = np.zeros(grid32.shape)
    bad[0, 0, 0] = np.nan
    with pytest.raises(FieldError):
        ScalarField(grid32, bad)


def test_sequence_span_checked(grid32):
    v = VectorField(grid32, np.zeros((3,) + grid32.shape))
    s0, s1 = Snapshot(0.0, v), Snapshot(1.0, v)
    assert len(FieldSequence([s0, s1], 0.5, 0.1)) == 2
    with pytest.raises(FieldError):
        FieldSequence([s0, s1], 1.0, 0.1)
    with pytest.raises(FieldError):
        FieldSequence([s1, s0], 0.5, 0.1)
