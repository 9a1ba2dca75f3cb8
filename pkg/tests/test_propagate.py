import numpy as np
import pytest

from magpack.errors import BoxExitError, ConfigError
from magpack.fields import ConstantField, GaugeData, TimeModulatedField
from magpack.flow import (FlowIntegrator, FlowState, free_symbol,
                          harmonic_potential, kinetic_potential)
from magpack.grids import GridFunction, SpatialGrid
from magpack.phasespace import WavepacketFrame, packet_on_grid
from magpack.propagate import (apply_K, apply_parametrix, apply_propagator,
                               build_plan, residual_R1, residual_R2,
                               residual_R3, solve_volterra,
                               verify_flat_approximation, _quad_weights)


LAM = 4.0


@pytest.fixture(scope="module")
def free_plan():
    gauge = GaugeData(ConstantField(b=0.0))
    grid = SpatialGrid(n=64, half_width=6.0)
    frame = WavepacketFrame(gauge, grid, LAM, 1.0, 8.0, drop_tol=1e-10)
    symbol = kinetic_potential(kappa=0.5)
    integ = FlowIntegrator(gauge, symbol, dt=1e-2)
    u0 = GridFunction.from_callable(
        grid, lambda y: np.exp(-np.sum(y ** 2, axis=-1) / (2 * 0.4 ** 2))
        * np.exp(1j * y[..., 0]))
    plan = build_plan(frame, integ, u0, 0.2, 8, drop_tol=1e-6, cache=True)
    return gauge, grid, frame, symbol, integ, u0, plan


def test_quad_weights_integrate_polynomials():
    # composite Simpson / 3-8 weights: exact for cubics on any node count
    for k in (1, 2, 3, 4, 5, 8, 11):
        dt = 0.7 / k
        w = _quad_weights(k, dt)
        s = np.arange(k + 1) * dt
        assert abs(np.sum(w) - 0.7) < 1e-12
        if k >= 2:
            for p in (1, 2, 3):
                assert abs(w @ s ** p - 0.7 ** (p + 1) / (p + 1)) < 1e-12


def test_residual_r1_vanishes_for_constant_field():
    gauge = GaugeData(ConstantField(b=1.0))
    symbol = free_symbol(kappa=0.5)
    st = FlowState.initial(np.array([0.3, -0.2]), np.array([1.0, 0.5]))
    y = np.random.default_rng(0).uniform(-2, 2, (40, 2))
    r1 = residual_R1(gauge, symbol, 0.0, st, y)
    assert np.abs(r1).max() < 1e-12


def test_residual_r2_free_diagonal_mean(free_plan):
    # free symbol: <g, R2 g>/||g||^2 = kappa d lam^2 / 2
    gauge, grid, frame, symbol, integ, u0, plan = free_plan
    g = packet_on_grid(gauge, grid, LAM, 0.0, np.zeros(2),
                       np.array([1.0, 0.0]))
    st = FlowState.initial(np.zeros(2), np.array([1.0, 0.0]))
    r2 = residual_R2(gauge, symbol, 0.0, st, g)
    mean = grid.inner(g.values, r2.values) / g.norm() ** 2
    want = 0.5 * 2 * LAM ** 2 / 2.0
    assert abs(mean - want) / want < 1e-3


def test_residual_r3_static_zero_and_timedep_bound():
    static = GaugeData(ConstantField(b=1.0))
    st = FlowState.initial(np.zeros(2), np.zeros(2))
    y = np.random.default_rng(1).uniform(-2, 2, (30, 2))
    assert np.abs(residual_R3(static, 0.0, st, y)).max() == 0.0
    tdep = GaugeData(TimeModulatedField(b=1.0, rate=0.5))
    r3 = np.abs(residual_R3(tdep, 0.3, st, y))
    w2 = np.sum(y ** 2, axis=-1)
    # |R3| <= C <y - x>^2 with a modest constant for this field
    assert np.all(r3 <= 2.0 * (1.0 + w2))


def test_absorbed_diagonal_value(free_plan):
    gauge, grid, frame, symbol, integ, u0, plan = free_plan
    want = symbol.kappa * 2 * LAM ** 2 / 2.0
    assert np.allclose(plan.alpha[0].real, want, rtol=1e-4)
    assert np.abs(plan.alpha[0].imag).max() < 1e-8


def test_parametrix_is_identity_at_t0(free_plan):
    gauge, grid, frame, symbol, integ, u0, plan = free_plan
    st = apply_parametrix(plan, 0.0)
    # coarse dev frame: the 2e-2 floor is lattice truncation, pinned loosely
    assert grid.norm(st.values - u0.values) / u0.norm() < 5e-2
    assert abs(st.mass_ratio - 1.0) < 5e-2


def test_kernel_diagonal_is_small_with_absorption(free_plan):
    # with the diagonal absorbed, K(t, t) applied to the initial state is
    # small relative to the unabsorbed kernel magnitude ~ kappa d lam^2 / 2
    gauge, grid, frame, symbol, integ, u0, plan = free_plan
    k00 = apply_K(plan, 0.0, 0.0, u0)
    assert k00.norm() / u0.norm() < 0.15 * (0.5 * 2 * LAM ** 2 / 2.0)


def test_volterra_contracts_and_corrects(free_plan):
    gauge, grid, frame, symbol, integ, u0, plan = free_plan
    vs = solve_volterra(plan, u0, 0.2, n_t=8, tol=1e-3, max_iter=12)
    hist = vs.residual_history
    assert all(b < a for a, b in zip(hist, hist[1:]))
    assert hist[-1] <= 1e-3
    from magpack.refsolve import exact_solution
    oracle = exact_solution("free", grid, center=(0.0, 0.0), width=0.4,
                            momentum=(1.0, 0.0), kappa=0.5)
    ref = oracle(0.2)
    raw = apply_parametrix(plan, 0.2)
    corrected = apply_propagator(plan, vs, 0.2)
    e_raw = grid.norm(raw.values - ref.values) / ref.norm()
    e_cor = grid.norm(corrected.values - ref.values) / ref.norm()
    assert e_cor < 0.5 * e_raw
    assert e_cor < 0.15


def test_volterra_guards(free_plan):
    gauge, grid, frame, symbol, integ, u0, plan = free_plan
    with pytest.raises(ConfigError):
        solve_volterra(plan, u0, 0.2, n_t=4)
    with pytest.raises(ConfigError):
        solve_volterra(plan, u0, 0.2, n_t=8, tol=-1.0)
    with pytest.raises(ConfigError):
        apply_parametrix(plan, 0.123456)


def test_box_exit_raises():
    gauge = GaugeData(ConstantField(b=0.0))
    grid = SpatialGrid(n=64, half_width=4.0)
    frame = WavepacketFrame(gauge, grid, LAM, 0.5, 8.0, drop_tol=1e-10)
    symbol = kinetic_potential(kappa=0.5)
    integ = FlowIntegrator(gauge, symbol, dt=1e-2)
    u0 = GridFunction.from_callable(
        grid, lambda y: np.exp(-np.sum(y ** 2, axis=-1)))
    with pytest.raises(BoxExitError):
        build_plan(frame, integ, u0, 2.0, 8, drop_tol=1e-6)


def test_flat_approximation_identity():
    # the frozen-packet evolution identity, checked by finite differences;
    # also pins the sign conventions of the flow and the multipliers
    gauge = GaugeData(ConstantField(b=1.0))
    symbol = harmonic_potential(v2=0.5, kappa=0.5)
    grid = SpatialGrid(n=64, half_width=6.0)
    rep = verify_flat_approximation(gauge, symbol, 0.0,
                                    np.array([0.5, -0.3]),
                                    np.array([1.0, 2.0]), LAM, grid)
    assert rep["residual"] < 5e-3


def test_cached_and_uncached_stamps_agree(free_plan):
    gauge, grid, frame, symbol, integ, u0, plan = free_plan
    from magpack.propagate import _stamp
    amp = plan.c * np.exp(1j * plan.psi_eff(3))
    cached = _stamp(plan, 3, amp)
    saved = plan.cache
    plan.cache = None
    full = _stamp(plan, 3, amp)
    plan.cache = saved
    assert grid.norm(cached.values - full.values) / full.norm() < 1e-4
