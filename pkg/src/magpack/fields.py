"""Magnetic fields and line-integral gauge quantities.

A magnetic field is a skew-symmetric matrix of components B_jk(t; y).  All
derived quantities live in the transversal gauge based at a point x:

    A_j(t; y, x) = -sum_k int_0^1 s (y_k - x_k) B_jk(t; x + s(y-x)) ds

with the ambient potential A(t; y) = A(t; y, 0).  The magnetic phase is the
line integral of the ambient potential along the straight segment from x to y,

    phi(t; y, x) = (y - x) . int_0^1 A(t; (1-s)x + s y) ds,

and the flux through the triangle (y, x, z) is the bilinear form

    Gamma(t; y, x, z) = < C(y,x,z) (y - x), (y - z) >,
    c_jk = int_0^1 int_0^s B_jk(t; t'y + (s-t')x + (1-s)z) dt' ds.

Integrals are evaluated by tensorised Gauss-Legendre quadrature.  Field
classes may provide closed-form shortcuts; the quadrature path is always
available and is the reference the shortcuts are tested against.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from functools import lru_cache

import numpy as np

from .errors import OutOfDomainError, QuadratureError

_FD_STEP = 1e-5  # central-difference fallback step for field gradients

__all__ = [
    "MagneticField",
    "ConstantField",
    "BumpField",
    "TimeModulatedField",
    "CompositeField",
    "GaugeData",
    "make_field",
    "potential_at",
    "phase_phi",
    "flux_gamma",
    "potential_time_derivative",
    "gauss_legendre_01",
]


@lru_cache(maxsize=32)
def gauss_legendre_01(order: int):
    """Gauss-Legendre nodes and weights transplanted to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def _skew_pairs(d):
    return [(j, k) for j in range(d) for k in range(j + 1, d)]


class MagneticField:
    """Base class: a time-dependent skew matrix field B_jk(t; y).

    Subclasses implement ``component`` (and optionally analytic gradients,
    time derivatives and closed-form gauge quantities).  ``bound_CB`` is the
    constant in |Gamma| <= C_B |y-x||y-z| and in the derivative decay
    assumption; ``decay_eps`` is the epsilon of the <y>^(-1-eps) decay of
    the field gradient.
    """

    dim = 2
    time_dependent = False

    def __init__(self, dim=2, bound_CB=1.0, decay_eps=1.0):
        if dim < 2:
            raise OutOfDomainError(f"field dimension must be >= 2, got {dim}")
        self.dim = dim
        self.bound_CB = float(bound_CB)
        self.decay_eps = float(decay_eps)

    def parts(self):
        """Additive decomposition used to mix closed-form and quadrature paths."""
        return [self]

    def component(self, j, k, t, y):
        raise NotImplementedError

    def component_grad(self, j, k, t, y):
        """Gradient of B_jk in y; central-difference fallback."""
        y = np.asarray(y, dtype=float)
        out = np.empty(y.shape, dtype=float)
        for ax in range(self.dim):
            e = np.zeros(self.dim)
            e[ax] = _FD_STEP
            out[..., ax] = (
                self.component(j, k, t, y + e) - self.component(j, k, t, y - e)
            ) / (2.0 * _FD_STEP)
        return out

    def time_derivative(self, j, k, t, y):
        if not self.time_dependent:
            y = np.asarray(y, dtype=float)
            return np.zeros(y.shape[:-1])
        raise NotImplementedError

    # Closed-form hooks; `None` means "use quadrature".
    def potential_closed(self, t, y, x):
        return None

    def phase_closed(self, t, y, x):
        return None

    def potential_div_closed(self, t, y, x):
        return None

    def potential_dot_closed(self, t, y, x):
        return None


class ConstantField(MagneticField):
    """Spatially constant field.  For d=2 pass the scalar b = B_12."""

    def __init__(self, b=1.0, matrix=None, dim=2, decay_eps=1.0):
        if matrix is not None:
            matrix = np.asarray(matrix, dtype=float)
            dim = matrix.shape[0]
            if not np.allclose(matrix, -matrix.T):
                raise OutOfDomainError("constant field matrix must be skew-symmetric")
        else:
            matrix = np.zeros((dim, dim))
            matrix[0, 1] = b
            matrix[1, 0] = -b
        super().__init__(dim=dim, bound_CB=max(np.abs(matrix).max(), 1e-30),
                         decay_eps=decay_eps)
        self.matrix = matrix

    def component(self, j, k, t, y):
        y = np.asarray(y, dtype=float)
        return np.full(y.shape[:-1], self.matrix[j, k])

    def component_grad(self, j, k, t, y):
        y = np.asarray(y, dtype=float)
        return np.zeros(y.shape)

    def potential_closed(self, t, y, x):
        # A_j(y,x) = -1/2 sum_k B_jk (y_k - x_k), exact for constant B.
        w = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        return -0.5 * np.einsum("jk,...k->...j", self.matrix, w)

    def phase_closed(self, t, y, x):
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float) + np.zeros_like(y)
        m = 0.5 * (x + y)
        return -0.5 * np.einsum("...j,jk,...k->...", y - x, self.matrix, m)

    def potential_div_closed(self, t, y, x):
        y = np.asarray(y, dtype=float)
        return np.zeros(y.shape[:-1])

    def potential_dot_closed(self, t, y, x):
        y = np.asarray(y, dtype=float)
        return np.zeros(y.shape)


class TimeModulatedField(MagneticField):
    """Constant-in-space field with a smooth time modulation b(t) = b(1+rate*t)."""

    time_dependent = True

    def __init__(self, b=1.0, rate=0.5, matrix=None, dim=2, decay_eps=1.0):
        self._static = ConstantField(b=b, matrix=matrix, dim=dim)
        super().__init__(dim=self._static.dim,
                         bound_CB=self._static.bound_CB,  # refined below
                         decay_eps=decay_eps)
        self.rate = float(rate)

    def modulation(self, t):
        return 1.0 + self.rate * t

    @property
    def matrix(self):
        return self._static.matrix

    def component(self, j, k, t, y):
        return self.modulation(t) * self._static.component(j, k, t, y)

    def component_grad(self, j, k, t, y):
        y = np.asarray(y, dtype=float)
        return np.zeros(y.shape)

    def time_derivative(self, j, k, t, y):
        return self.rate * self._static.component(j, k, t, y)

    def potential_closed(self, t, y, x):
        return self.modulation(t) * self._static.potential_closed(t, y, x)

    def phase_closed(self, t, y, x):
        return self.modulation(t) * self._static.phase_closed(t, y, x)

    def potential_div_closed(self, t, y, x):
        y = np.asarray(y, dtype=float)
        return np.zeros(y.shape[:-1])

    def potential_dot_closed(self, t, y, x):
        return self.rate * self._static.potential_closed(t, y, x)


class BumpField(MagneticField):
    """Compactly supported smooth bump in B_12, centred at ``center``.

    B_12(y) = amp * exp(1 - 1/(1 - r^2)) with r = |y - center| / width,
    identically zero for r >= 1.
    """

    def __init__(self, amp=0.5, center=(0.0, 0.0), width=1.5, dim=2):
        center = np.asarray(center, dtype=float)
        if center.shape != (dim,):
            raise OutOfDomainError("bump center must have length dim")
        # sup|grad B| of the mollifier profile is ~2.2/width; fold into C_B.
        super().__init__(dim=dim, bound_CB=abs(amp) * max(1.0, 2.3 / width),
                         decay_eps=1.0)
        self.amp = float(amp)
        self.center = center
        self.width = float(width)

    def _profile(self, rho):
        # rho = r^2; mollifier and its d/d(rho) derivative, both 0 for rho >= 1.
        inside = rho < 1.0
        out = np.zeros_like(rho)
        dout = np.zeros_like(rho)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            g = 1.0 - rho
            val = np.exp(1.0 - 1.0 / np.where(inside, g, 1.0))
            out = np.where(inside, val, 0.0)
            dout = np.where(inside, -val / np.where(inside, g * g, 1.0), 0.0)
        return out, dout

    def component(self, j, k, t, y):
        y = np.asarray(y, dtype=float)
        if (j, k) in ((0, 1), (1, 0)):
            rho = np.sum((y - self.center) ** 2, axis=-1) / self.width**2
            val = self.amp * self._profile(rho)[0]
            return val if (j, k) == (0, 1) else -val
        return np.zeros(y.shape[:-1])

    def component_grad(self, j, k, t, y):
        y = np.asarray(y, dtype=float)
        if (j, k) in ((0, 1), (1, 0)):
            w = y - self.center
            rho = np.sum(w**2, axis=-1) / self.width**2
            dprof = self._profile(rho)[1]
            g = self.amp * dprof[..., None] * 2.0 * w / self.width**2
            return g if (j, k) == (0, 1) else -g
        return np.zeros(y.shape)


class CompositeField(MagneticField):
    """Pointwise sum of fields (all quantities here are linear in B)."""

    def __init__(self, *fields_):
        dims = {f.dim for f in fields_}
        if len(dims) != 1:
            raise OutOfDomainError("composite parts must share a dimension")
        super().__init__(dim=dims.pop(),
                         bound_CB=sum(f.bound_CB for f in fields_),
                         decay_eps=min(f.decay_eps for f in fields_))
        self._parts = list(fields_)
        self.time_dependent = any(f.time_dependent for f in fields_)

    def parts(self):
        return self._parts

    def component(self, j, k, t, y):
        return sum(f.component(j, k, t, y) for f in self._parts)

    def component_grad(self, j, k, t, y):
        return sum(f.component_grad(j, k, t, y) for f in self._parts)

    def time_derivative(self, j, k, t, y):
        return sum(f.time_derivative(j, k, t, y) for f in self._parts)


def make_field(kind, **kw):
    """Field library used by the experiment harness."""
    if kind == "constant":
        return ConstantField(b=kw.get("b", 1.0))
    if kind == "constant_bump":
        const = ConstantField(b=kw.get("b", 1.0))
        bump = BumpField(amp=kw.get("amp", 0.5),
                         center=kw.get("center", (0.0, 0.0)),
                         width=kw.get("width", 1.5))
        return CompositeField(const, bump)
    if kind == "time_modulated":
        return TimeModulatedField(b=kw.get("b", 1.0), rate=kw.get("rate", 0.5))
    raise OutOfDomainError(f"unknown field kind {kind!r}")


@dataclass
class GaugeData:
    """Bundles a field with quadrature orders and an optional gauge shift.

    ``gauge_shift`` is a pair (v, grad_v) of callables; it replaces the
    ambient potential A by A + grad(v), which shifts the magnetic phase by
    the line integral of grad(v) (evaluated with the same quadrature, hence
    exactly for polynomial v of degree < 2*quad_order).
    """

    field: MagneticField
    quad_order: int = 16
    quad_order_2d: int = 16
    gauge_shift: tuple = None
    prefer_closed: bool = True

    def __post_init__(self):
        if self.quad_order < 8 or self.quad_order_2d < 8:
            raise QuadratureError("quadrature orders below 8 are not supported")

    @property
    def dim(self):
        return self.field.dim

    def _check_points(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.dim:
            raise OutOfDomainError(
                f"points have trailing dim {y.shape[-1]}, field dim {self.dim}")
        return y

    # -- transversal potential --------------------------------------------

    def _potential_quad(self, part, t, y, x, deriv=False):
        """A_j(t;y,x) for one additive part by 1-d quadrature.

        With ``deriv`` the time-derivative components are integrated instead,
        giving d/dt A_j(t;y,x)."""
        comp = part.time_derivative if deriv else part.component
        w = y - x
        out = np.zeros(y.shape)
        s, ws = gauss_legendre_01(self.quad_order)
        for si, wi in zip(s, ws):
            p = x + si * w
            for j, k in _skew_pairs(self.dim):
                bjk = comp(j, k, t, p)
                out[..., j] -= wi * si * w[..., k] * bjk
                out[..., k] += wi * si * w[..., j] * bjk
        return out

    def potential(self, t, y, x=None, deriv=False):
        """Transversal-gauge potential A(t; y, x), shape (..., d)."""
        y = self._check_points(y)
        x = np.zeros_like(y) if x is None else self._check_points(x) + np.zeros_like(y)
        out = np.zeros(y.shape)
        for part in self.field.parts():
            closed = None
            if self.prefer_closed:
                closed = (part.potential_dot_closed(t, y, x) if deriv
                          else part.potential_closed(t, y, x))
            out += closed if closed is not None else self._potential_quad(
                part, t, y, x, deriv=deriv)
        return out

    def potential_ambient(self, t, y):
        """A(t; y, 0), plus grad(v) when a gauge shift is installed."""
        y = self._check_points(y)
        out = self.potential(t, y, np.zeros(self.dim))
        if self.gauge_shift is not None:
            out = out + np.asarray(self.gauge_shift[1](y), dtype=float)
        return out

    # -- magnetic phase ----------------------------------------------------

    def _phase_quad(self, part, t, y, x):
        """Double quadrature of the combined segment/radial integral."""
        w0 = y - x
        out = np.zeros(y.shape[:-1])
        s, ws = gauss_legendre_01(self.quad_order)
        for si, wi in zip(s, ws):
            p = x + si * w0  # point on the segment
            for ti, vi in zip(s, ws):
                q = ti * p  # point on the ray 0 -> p
                for j, k in _skew_pairs(self.dim):
                    bjk = part.component(j, k, t, q)
                    out -= wi * vi * ti * (
                        w0[..., j] * p[..., k] - w0[..., k] * p[..., j]) * bjk
        return out

    def phase(self, t, y, x):
        """Magnetic phase phi(t; y, x) of the (possibly shifted) gauge."""
        y = self._check_points(y)
        x = self._check_points(x) + np.zeros_like(y)
        out = np.zeros(y.shape[:-1])
        for part in self.field.parts():
            closed = part.phase_closed(t, y, x) if self.prefer_closed else None
            out += closed if closed is not None else self._phase_quad(part, t, y, x)
        if self.gauge_shift is not None:
            gv = self.gauge_shift[1]
            w0 = y - x
            s, ws = gauss_legendre_01(self.quad_order)
            for si, wi in zip(s, ws):
                out += wi * np.sum(
                    np.asarray(gv(x + si * w0), dtype=float) * w0, axis=-1)
        return out

    # -- y-divergence of the transversal potential -------------------------

    def potential_div_y(self, t, y, x):
        """sum_j d/dy_j A_j(t; y, x).

        The first Taylor term drops out by skew-symmetry; what remains is
        -sum_{j,k} int_0^1 s^2 (y_k-x_k) d_j B_jk(t; x+s(y-x)) ds.
        """
        y = self._check_points(y)
        x = self._check_points(x) + np.zeros_like(y)
        w = y - x
        out = np.zeros(y.shape[:-1])
        s, ws = gauss_legendre_01(self.quad_order)
        for part in self.field.parts():
            closed = part.potential_div_closed(t, y, x) if self.prefer_closed else None
            if closed is not None:
                out += closed
                continue
            for si, wi in zip(s, ws):
                p = x + si * w
                for j, k in _skew_pairs(self.dim):
                    gjk = part.component_grad(j, k, t, p)
                    # term (j,k) with B_jk, and the mirror (k,j) with -B_jk
                    out -= wi * si * si * (
                        w[..., k] * gjk[..., j] - w[..., j] * gjk[..., k])
        return out

    # -- time derivative of the potential -----------------------------------

    def potential_dot(self, t, y, x=None):
        """d/dt A(t; y, x) (zero for static fields)."""
        return self.potential(t, y, x, deriv=True)

    def potential_dot_line_avg(self, t, y, x):
        """int_0^1 Adot(t; x + s(y-x), 0) ds, used by the R3 remainder."""
        y = self._check_points(y)
        x = self._check_points(x) + np.zeros_like(y)
        out = np.zeros(y.shape)
        s, ws = gauss_legendre_01(self.quad_order)
        origin = np.zeros(self.dim)
        for si, wi in zip(s, ws):
            out += wi * self.potential(t, x + si * (y - x), origin, deriv=True)
        return out

    # -- triangle flux -------------------------------------------------------

    def flux(self, t, y, x, z):
        """Gamma(t; y, x, z) = <C (y-x), (y-z)>."""
        y = self._check_points(y)
        x = self._check_points(x) + np.zeros_like(y)
        z = self._check_points(z) + np.zeros_like(y)
        s, ws = gauss_legendre_01(self.quad_order_2d)
        out = np.zeros(y.shape[:-1])
        for si, wi in zip(s, ws):
            for ti, vi in zip(s, ws):
                # substitute t' = s*tau to map the simplex to the unit square
                p = si * ti * y + si * (1.0 - ti) * x + (1.0 - si) * z
                for j, k in _skew_pairs(self.dim):
                    bjk = self.field.component(j, k, t, p)
                    # Gamma = sum_{j,k} c_jk (y-x)_k (y-z)_j, B skew
                    out += wi * vi * si * bjk * (
                        (y[..., k] - x[..., k]) * (y[..., j] - z[..., j])
                        - (y[..., j] - x[..., j]) * (y[..., k] - z[..., k]))
        return out


# Spec-level functional aliases.

def potential_at(gauge: GaugeData, t, y, x=None):
    return gauge.potential(t, y, x)


def phase_phi(gauge: GaugeData, t, y, x):
    return gauge.phase(t, y, x)


def flux_gamma(gauge: GaugeData, t, y, x, z):
    return gauge.flux(t, y, x, z)


def potential_time_derivative(gauge: GaugeData, t, y, x=None):
    return gauge.potential_dot(t, y, x)
