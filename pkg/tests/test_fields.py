import numpy as np
import pytest

from magpack.errors import OutOfDomainError, QuadratureError
from magpack.fields import (BumpField, CompositeField, ConstantField,
                            GaugeData, TimeModulatedField, gauss_legendre_01,
                            make_field)


def transversal_potential_oracle(field, t, y, x, ns=4000):
    """A_j(t;y,x) = -sum_k int_0^1 s (y-x)_k B_jk(x+s(y-x)) ds by brute-force
    midpoint quadrature, straight from the definition."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    w = y - x
    s = (np.arange(ns) + 0.5) / ns
    out = np.zeros(2)
    for si in s:
        p = x + si * w
        b = field.component(0, 1, t, np.asarray(p))
        out[0] -= si * w[1] * b / ns
        out[1] += si * w[0] * b / ns
    return out


def test_constant_field_potential_closed_form():
    gauge = GaugeData(ConstantField(b=1.3))
    y = np.array([0.7, -0.4])
    x = np.array([0.1, 0.2])
    got = gauge.potential(0.0, y, x)
    want = transversal_potential_oracle(gauge.field, 0.0, y, x)
    assert np.allclose(got, want, atol=1e-10)
    # ambient potential: x = 0
    amb = gauge.potential_ambient(0.0, y)
    want_amb = transversal_potential_oracle(gauge.field, 0.0, y, np.zeros(2))
    assert np.allclose(amb, want_amb, atol=1e-10)


def test_bump_field_potential_vs_definition():
    field = BumpField(amp=0.8, width=1.2)
    gauge = GaugeData(field)
    y = np.array([0.9, 0.3])
    x = np.array([-0.2, 0.5])
    got = gauge.potential(0.0, y, x)
    want = transversal_potential_oracle(field, 0.0, y, x)
    assert np.allclose(got, want, atol=1e-8)


def test_phase_antisymmetry_and_derivative_identity():
    # d_{y_j} phi(y, x) = A_j(y) - A_j(y, x), checked by central differences
    field = CompositeField(ConstantField(b=0.7), BumpField(amp=0.5, width=1.5))
    gauge = GaugeData(field)
    y = np.array([0.6, -0.3])
    x = np.array([0.2, 0.4])
    assert abs(gauge.phase(0.0, y, x) + gauge.phase(0.0, x, y)) < 1e-10
    h = 1e-5
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        dphi = (gauge.phase(0.0, y + e, x) - gauge.phase(0.0, y - e, x)) / (2 * h)
        want = gauge.potential_ambient(0.0, y)[j] - gauge.potential(0.0, y, x)[j]
        assert abs(dphi - want) < 1e-8


def test_flux_is_gauge_phase_cocycle():
    # phi(y,x) + phi(x,z) + phi(z,y) equals the flux through the triangle
    gauge = GaugeData(ConstantField(b=1.0))
    y, x, z = np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([-0.5, -0.5])
    cocycle = (gauge.phase(0.0, y, x) + gauge.phase(0.0, x, z)
               + gauge.phase(0.0, z, y))
    # constant b: |flux| = b * |signed triangle area|
    u, w = x - y, z - y
    area = 0.5 * (u[0] * w[1] - u[1] * w[0])
    assert abs(abs(cocycle) - abs(area)) < 1e-10
    assert abs(gauge.flux(0.0, y, x, z) - cocycle) < 1e-10


def test_time_modulated_potential_dot():
    field = TimeModulatedField(b=0.8, rate=0.4)
    gauge = GaugeData(field)
    y = np.array([0.5, -0.7])
    x = np.array([0.1, 0.3])
    t, h = 0.3, 1e-5
    fd = (gauge.potential(t + h, y, x) - gauge.potential(t - h, y, x)) / (2 * h)
    got = gauge.potential_dot(t, y, x)
    assert np.allclose(got, fd, atol=1e-8)


def test_potential_dot_line_avg_constant_rate():
    # for a spatially constant dB/dt the line average equals the midpoint rule
    field = TimeModulatedField(b=1.0, rate=0.5)
    gauge = GaugeData(field)
    y = np.array([0.8, 0.1])
    x = np.array([0.0, -0.2])
    avg = gauge.potential_dot_line_avg(0.2, y, x)
    s, w = gauss_legendre_01(24)
    want = np.zeros(2)
    for si, wi in zip(s, w):
        want += wi * gauge.potential_dot(0.2, x + si * (y - x))
    assert np.allclose(avg, want, atol=1e-9)


def test_make_field_kinds_and_guards():
    assert isinstance(make_field("constant", b=2.0), ConstantField)
    assert isinstance(make_field("constant_bump"), CompositeField)
    assert isinstance(make_field("time_modulated", rate=0.1),
                      TimeModulatedField)
    with pytest.raises(OutOfDomainError):
        make_field("nope")
    with pytest.raises(QuadratureError):
        GaugeData(ConstantField(), quad_order=4)


def test_potential_quadrature_matches_closed_form():
    # force the quadrature path and compare against the closed form
    gauge_q = GaugeData(ConstantField(b=1.1), prefer_closed=False)
    gauge_c = GaugeData(ConstantField(b=1.1))
    y = np.array([[0.3, 0.9], [-0.4, 0.2]])
    x = np.array([[0.0, 0.1], [0.5, -0.3]])
    assert np.allclose(gauge_q.potential(0.0, y, x),
                       gauge_c.potential(0.0, y, x), atol=1e-12)
    assert np.allclose(gauge_q.phase(0.0, y, x),
                       gauge_c.phase(0.0, y, x), atol=1e-10)


def test_gauge_shift_changes_phase_by_potential_difference():
    v = lambda y: y[..., 0]
    grad_v = lambda y: np.stack([np.ones(y.shape[:-1]),
                                 np.zeros(y.shape[:-1])], axis=-1)
    base = GaugeData(ConstantField(b=1.0))
    shifted = GaugeData(ConstantField(b=1.0), gauge_shift=(v, grad_v))
    y = np.array([0.6, 0.2])
    x = np.array([-0.1, 0.4])
    # ambient potential gains grad v
    da = shifted.potential_ambient(0.0, y) - base.potential_ambient(0.0, y)
    assert np.allclose(da, [1.0, 0.0], atol=1e-10)
    # phase gains the line integral of grad v, i.e. v(y) - v(x)
    dphi = shifted.phase(0.0, y, x) - base.phase(0.0, y, x)
    assert abs(dphi - (v(y) - v(x))) < 1e-10
