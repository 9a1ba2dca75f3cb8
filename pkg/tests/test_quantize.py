import numpy as np
import pytest

from magpack.errors import SizeGuardError
from magpack.fields import ConstantField, GaugeData
from magpack.flow import free_symbol, harmonic_potential, kinetic_potential
from magpack.grids import GridFunction, SpatialGrid
from magpack.quantize import (apply_op, apply_op_direct, covariant_derivative,
                              kn_correction)


@pytest.fixture(scope="module")
def free_setup():
    gauge = GaugeData(ConstantField(b=0.0))
    grid = SpatialGrid(n=64, half_width=6.0)
    u = GridFunction.from_callable(
        grid, lambda y: np.exp(-np.sum(y ** 2, axis=-1)))
    return gauge, grid, u


def test_covariant_derivative_reduces_to_momentum(free_setup):
    # A = 0: P_j u = -i d_j u
    gauge, grid, u = free_setup
    got = covariant_derivative(gauge, 0.0, u, 0)
    mesh = grid.mesh()
    want = -1j * (-2.0 * mesh[..., 0]) * u.values
    assert grid.norm(got.values - want) / u.norm() < 1e-6


def test_covariant_derivative_magnetic_term():
    # constant b: P_j u = (-i d_j - A_j) u with A = -B y / 2
    gauge = GaugeData(ConstantField(b=1.5))
    grid = SpatialGrid(n=64, half_width=6.0)
    u = GridFunction.from_callable(
        grid, lambda y: np.exp(-np.sum(y ** 2, axis=-1)))
    mesh = grid.mesh()
    amb = gauge.potential_ambient(0.0, mesh)
    for j in range(2):
        got = covariant_derivative(gauge, 0.0, u, j)
        want = (-1j * (-2.0 * mesh[..., j]) - amb[..., j]) * u.values
        assert grid.norm(got.values - want) / u.norm() < 1e-6


def test_free_symbol_on_plane_wave(free_setup):
    # Op(kappa |eta|^2) e^{i k y} = kappa |k|^2 e^{i k y} for A = 0
    gauge, grid, _ = free_setup
    k = 2.0 * np.pi / (2 * grid.half_width) * np.array([4.0, -6.0])
    u = GridFunction.from_callable(
        grid, lambda y: np.exp(1j * np.sum(k * y, axis=-1)))
    out = apply_op(gauge, free_symbol(kappa=0.5), 0.0, u)
    want = 0.5 * np.sum(k ** 2) * u.values
    assert grid.norm(out.values - want) / grid.norm(want) < 1e-10


def test_potential_multiplication(free_setup):
    gauge, grid, u = free_setup
    symbol = kinetic_potential(V=lambda y: np.sum(y ** 2, axis=-1),
                               grad_V=lambda y: 2.0 * y,
                               hess_V=None, kappa=0.0)
    out = apply_op(gauge, symbol, 0.0, u)
    mesh = grid.mesh()
    want = np.sum(mesh ** 2, axis=-1) * u.values
    assert grid.norm(out.values - want) / u.norm() < 1e-12


def test_apply_op_vs_direct_constant_field():
    gauge = GaugeData(ConstantField(b=1.0))
    grid = SpatialGrid(n=32, half_width=5.0)
    u = GridFunction.from_callable(
        grid, lambda y: np.exp(-np.sum(y ** 2, axis=-1))
        * np.exp(1j * y[..., 1]))
    symbol = harmonic_potential(v2=0.5, kappa=0.5)
    fast = apply_op(gauge, symbol, 0.0, u)
    slow = apply_op_direct(gauge, symbol, 0.0, u)
    assert (grid.norm(fast.values - slow.values)
            / grid.norm(fast.values)) < 1e-3


def test_direct_size_guard():
    gauge = GaugeData(ConstantField(b=1.0))
    grid = SpatialGrid(n=128, half_width=5.0)
    u = GridFunction(grid, np.zeros(grid.shape))
    with pytest.raises(SizeGuardError):
        apply_op_direct(gauge, free_symbol(), 0.0, u)


def test_kn_correction_vanishes_for_separable_symbols():
    corr = kn_correction(harmonic_potential(v2=0.5, kappa=0.5))
    y = np.random.default_rng(0).standard_normal((5, 2))
    eta = np.random.default_rng(1).standard_normal((5, 2))
    assert np.allclose(corr.eval(0.0, y, eta), 0.0)


def test_magnetic_ground_state_energy():
    # lowest Landau level: Op^A(|eta|^2) e^{-b|y|^2/4} = b e^{-b|y|^2/4}
    b = 1.0
    gauge = GaugeData(ConstantField(b=b))
    grid = SpatialGrid(n=128, half_width=8.0)
    u = GridFunction.from_callable(
        grid, lambda y: np.exp(-b * np.sum(y ** 2, axis=-1) / 4.0))
    out = apply_op(gauge, free_symbol(kappa=1.0), 0.0, u)
    assert grid.norm(out.values - b * u.values) / u.norm() < 1e-5
