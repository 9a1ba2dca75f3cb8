"""Gauge-covariant wavepacket transform on phase-space lattices.

The analysing wavepacket at phase-space point (x, xi) with scale lambda is

    g_{x,xi}(y) = lambda^{d/2} e^{i xi.(y-x)} g(lambda (y-x)) e^{i phi(y,x)},

with the normalised window g(w) = (2 pi)^{-d/2} pi^{-d/4} e^{-|w|^2/2} and
phi the magnetic phase of the gauge.  The forward transform is
T u(x, xi) = <g_{x,xi}, u>; with this normalisation T is an L^2 isometry and
u = T* T u, so synthesis needs no extra 2*pi factors.

Lattice evaluation exploits that everything except the magnetic phase factor
is a tensor product over axes: per x-node the windowed data is contracted
against per-axis matrices env(w) * exp(-i xi w).  The magnetic phase on each
stamp is cached (shared across times for static fields).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import BoxExitError, ConfigError, OutOfDomainError
from .fields import GaugeData
from .grids import GridFunction, SpatialGrid

__all__ = [
    "window_value",
    "wavepacket_eval",
    "WavepacketFrame",
    "PhaseSpaceCoefficients",
    "Weight",
    "analyze",
    "synthesize",
    "modulation_norm",
    "matrix_element",
    "packet_on_grid",
    "scatter_windows",
    "save_coefficients",
    "load_coefficients",
]


def window_norm_const(d):
    return (2.0 * np.pi) ** (-d / 2.0) * np.pi ** (-d / 4.0)


def window_value(w):
    """Normalised Gaussian window, ||g||_2^2 = (2 pi)^(-d)."""
    w = np.asarray(w, dtype=float)
    d = w.shape[-1]
    return window_norm_const(d) * np.exp(-0.5 * np.sum(w * w, axis=-1))


def wavepacket_eval(gauge: GaugeData, lam, t, x, xi, y):
    """Pointwise wavepacket values g_{x,xi}(y) at points y of shape (..., d)."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    d = gauge.dim
    w = y - x
    env = lam ** (d / 2.0) * window_value(lam * w)
    ph = np.sum(xi * w, axis=-1) + gauge.phase(t, y, x + np.zeros_like(y))
    return env * np.exp(1j * ph)


def packet_on_grid(gauge, grid: SpatialGrid, lam, t, x, xi):
    """Wavepacket sampled on the full grid (no truncation)."""
    return GridFunction(grid, wavepacket_eval(gauge, lam, t, x, xi, grid.mesh()))


@dataclass
class Weight:
    """Polynomial phase-space weight nu_{lam,m}(x, xi)."""

    lam: float
    m: float

    def __call__(self, x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        q = (np.sum((x / self.lam) ** 2, axis=-1)
             + np.sum((xi / self.lam) ** 2, axis=-1))
        return (1.0 + q) ** (self.m / 2.0)


class WavepacketFrame:
    """Phase-space lattice of wavepackets tied to a spatial grid.

    Lattice spacings default to dx = density/lambda, dxi = density*lambda;
    the oversampling invariant dx*dxi <= pi/2 is enforced.  Stamps (the
    support window used for evaluation) must stay strictly inside the grid
    box: there is no periodic wrap-around.
    """

    def __init__(self, gauge: GaugeData, grid: SpatialGrid, lam,
                 x_halfwidth, xi_halfwidth, xi_center=None,
                 density=1.0, stamp_radius=None, drop_tol=1e-12):
        if lam < 1.0:
            raise ConfigError(f"lambda must be >= 1, got {lam}")
        if gauge.dim != grid.dim:
            raise ConfigError("gauge and grid dimension mismatch")
        self.gauge = gauge
        self.grid = grid
        self.lam = float(lam)
        self.dx = density / lam
        self.dxi = density * lam
        if self.dx * self.dxi > np.pi / 2.0 + 1e-12:
            raise ConfigError(
                f"lattice too sparse: dx*dxi = {self.dx*self.dxi:.4f} > pi/2")
        self.stamp_radius = (8.0 / lam) if stamp_radius is None else float(stamp_radius)
        if self.stamp_radius < 8.0 / lam - 1e-12:
            raise ConfigError("stamp_radius below 8/lambda loses window mass")
        self.drop_tol = float(drop_tol)
        d = gauge.dim
        xi_center = np.zeros(d) if xi_center is None else np.asarray(xi_center, float)

        def sym_lattice(half, step, center=0.0):
            k = int(np.floor(half / step))
            return center + step * np.arange(-k, k + 1)

        self.x_axes = [sym_lattice(x_halfwidth, self.dx) for _ in range(d)]
        self.xi_axes = [sym_lattice(xi_halfwidth, self.dxi, xi_center[a])
                        for a in range(d)]
        L, delta = grid.half_width, grid.step
        xmax = max(np.abs(ax).max() for ax in self.x_axes)
        if xmax + self.stamp_radius >= L - delta:
            raise OutOfDomainError(
                "x-lattice stamps reach the box boundary; enlarge the grid")
        ximax = max(np.abs(ax).max() for ax in self.xi_axes)
        if ximax > 0.95 * np.pi / delta:
            raise ConfigError("xi-lattice exceeds the grid Nyquist box")
        self._axis_cache = None
        self._phase_cache = {}
        self._calibration = None

    @property
    def dim(self):
        return self.gauge.dim

    @property
    def shape(self):
        return tuple(len(a) for a in self.x_axes) + tuple(len(a) for a in self.xi_axes)

    def cell_measure(self):
        return (self.dx * self.dxi) ** self.dim

    # -- per-axis separable data -------------------------------------------

    def _axis_data(self):
        if self._axis_cache is not None:
            return self._axis_cache
        g = self.grid
        ax_grid = g.axis()
        normc = self.lam ** (self.dim / 2.0) * window_norm_const(self.dim)
        data = []
        for a in range(self.dim):
            per_node = []
            for xa in self.x_axes[a]:
                i0 = int(np.ceil((xa - self.stamp_radius + g.half_width) / g.step))
                i1 = int(np.floor((xa + self.stamp_radius + g.half_width) / g.step))
                if i0 < 1 or i1 > g.n - 2:
                    raise BoxExitError("stamp touches the grid boundary")
                w = ax_grid[i0:i1 + 1] - xa
                env = np.exp(-0.5 * self.lam**2 * w * w)
                F = env[:, None] * np.exp(-1j * np.outer(w, self.xi_axes[a]))
                per_node.append((i0, i1, w, F))
            data.append(per_node)
        self._axis_cache = (normc, data)
        return self._axis_cache

    def _phase_key(self, t):
        return t if self.gauge.field.time_dependent else None

    def _phase_base(self, t, node):
        """exp(i phi(y, x_node)) on the node's stamp, cached."""
        key = (self._phase_key(t), node)
        hit = self._phase_cache.get(key)
        if hit is not None:
            return hit
        _, data = self._axis_data()
        axes = [data[a][node[a]] for a in range(self.dim)]
        coords = [self.grid.axis()[i0:i1 + 1] for (i0, i1, _, _) in axes]
        mesh = np.stack(np.meshgrid(*coords, indexing="ij"), axis=-1)
        xc = np.array([self.x_axes[a][node[a]] for a in range(self.dim)])
        phi = self.gauge.phase(t, mesh, xc + np.zeros_like(mesh))
        base = np.exp(1j * phi)
        self._phase_cache[key] = base
        return base

    def x_nodes(self):
        return itertools.product(*[range(len(ax)) for ax in self.x_axes])

    def node_slices(self, node):
        _, data = self._axis_data()
        return tuple(slice(data[a][node[a]][0], data[a][node[a]][1] + 1)
                     for a in range(self.dim))

    def calibration(self, t=0.0):
        """Synthesis scalar fitted once from round-tripping a reference packet."""
        if self._calibration is None:
            xc = np.array([ax[len(ax) // 2] for ax in self.x_axes])
            xic = np.array([ax[len(ax) // 2] for ax in self.xi_axes])
            ref = packet_on_grid(self.gauge, self.grid, self.lam, t, xc, xic)
            coeffs = analyze(self, ref, t=t)
            s = _synthesize_raw(self, coeffs, t=t)
            num = self.grid.inner(s, ref.values)
            den = self.grid.inner(s, s)
            self._calibration = complex(num / den)
        return self._calibration


@dataclass
class PhaseSpaceCoefficients:
    frame: WavepacketFrame
    values: np.ndarray  # shape (*nx_axes, *nxi_axes)

    def norm_l2(self):
        """Discrete L^2(dx dxi) norm; equals ||u||_2 up to lattice error."""
        w = self.frame.cell_measure()
        return float(np.sqrt(w) * np.linalg.norm(self.values))

    def lattice_points(self):
        """Meshgrids X (..., d) and Xi (..., d) matching ``values``."""
        f = self.frame
        grids = np.meshgrid(*f.x_axes, *f.xi_axes, indexing="ij")
        X = np.stack(grids[:f.dim], axis=-1)
        Xi = np.stack(grids[f.dim:], axis=-1)
        return X, Xi


def analyze(frame: WavepacketFrame, u: GridFunction, t=0.0):
    """Forward transform: coefficients <g_node, u> over the lattice."""
    if u.grid != frame.grid:
        raise OutOfDomainError("grid mismatch between frame and data")
    normc, data = frame._axis_data()
    d = frame.dim
    out = np.zeros(frame.shape, dtype=complex)
    vol = frame.grid.cell_volume()
    for node in frame.x_nodes():
        sl = frame.node_slices(node)
        W = u.values[sl] * np.conj(frame._phase_base(t, node))
        arr = W
        for a in range(d):
            arr = np.tensordot(arr, data[a][node[a]][3], axes=([0], [0]))
        out[node] = normc * vol * arr
    return PhaseSpaceCoefficients(frame, out)


def _synthesize_raw(frame, coeffs, t=0.0):
    normc, data = frame._axis_data()
    d = frame.dim
    out = np.zeros(frame.grid.shape, dtype=complex)
    vals = coeffs.values
    peak = np.abs(vals).max()
    cut = frame.drop_tol * peak
    meas = frame.cell_measure()
    for node in frame.x_nodes():
        block = vals[node]
        if np.abs(block).max() < cut:
            continue
        arr = block
        for a in range(d):
            arr = np.tensordot(arr, np.conj(data[a][node[a]][3]), axes=([0], [1]))
        sl = frame.node_slices(node)
        out[sl] += normc * meas * arr * frame._phase_base(t, node)
    return out


def synthesize(frame: WavepacketFrame, coeffs: PhaseSpaceCoefficients, t=0.0):
    """Adjoint transform with the fitted calibration scalar."""
    cal = frame.calibration(t=t)
    return GridFunction(frame.grid, cal * _synthesize_raw(frame, coeffs, t=t))


def modulation_norm(coeffs: PhaseSpaceCoefficients, m=0.0, p=2.0):
    """Weighted L^p norm of the coefficient field (modulation-space norm)."""
    f = coeffs.frame
    X, Xi = coeffs.lattice_points()
    nu = Weight(f.lam, m)(X, Xi)
    vals = nu * np.abs(coeffs.values)
    if np.isinf(p):
        return float(vals.max())
    w = f.cell_measure()
    return float((w * np.sum(vals**p)) ** (1.0 / p))


def matrix_element(gauge, grid, lam, t, bra, ket, op=None):
    """<g_bra, L g_ket> by grid quadrature; ``op`` maps GridFunction->GridFunction."""
    gk = packet_on_grid(gauge, grid, lam, t, ket[0], ket[1])
    if op is not None:
        gk = op(gk)
    gb = packet_on_grid(gauge, grid, lam, t, bra[0], bra[1])
    return complex(grid.inner(gb.values, gk.values))


# -- scattered-centre stamping (used by the parametrix) ----------------------

def scatter_windows(gauge, grid: SpatialGrid, lam, t, X, Xi, radius, chunk=2048):
    """Iterate over chunks of scattered wavepacket windows.

    X, Xi have shape (N, d).  Yields (sel, idx, Y, W, packet) where ``sel``
    is the chunk slice, ``idx`` flat grid indices of shape (C, m^d), ``Y``
    the window coordinates (C, m^d, d), ``W = Y - x`` and ``packet`` the
    wavepacket values (C, m^d).  All windows share the same per-axis width m.
    """
    X = np.asarray(X, dtype=float)
    Xi = np.asarray(Xi, dtype=float)
    d = grid.dim
    n, L, delta = grid.n, grid.half_width, grid.step
    mhalf = int(np.ceil(radius / delta))
    m = 2 * mhalf + 1
    normc = lam ** (d / 2.0) * window_norm_const(d)
    offs = np.arange(-mhalf, mhalf + 1)
    N = X.shape[0]
    for lo in range(0, N, chunk):
        sel = slice(lo, min(lo + chunk, N))
        Xc, Xic = X[sel], Xi[sel]
        i0 = np.rint((Xc + L) / delta).astype(int)  # (C, d) centre indices
        if np.any(i0 - mhalf < 1) or np.any(i0 + mhalf > n - 2):
            raise BoxExitError("a flowed wavepacket stamp left the box interior")
        C = Xc.shape[0]
        # per-axis window indices (C, m) then full product (C, m^d)
        ax_idx = [i0[:, a:a + 1] + offs[None, :] for a in range(d)]
        flat = ax_idx[0]
        for a in range(1, d):
            flat = (flat[..., None] * n + ax_idx[a].reshape(
                (C,) + (1,) * (flat.ndim - 1) + (m,)))
        idx = flat.reshape(C, m**d)
        Y = np.empty((C, m**d, d))
        for a in range(d):
            ya = -L + delta * ax_idx[a]  # (C, m)
            shape = (C,) + (1,) * a + (m,) + (1,) * (d - 1 - a)
            Y[..., a] = np.broadcast_to(
                ya.reshape(shape), (C,) + (m,) * d).reshape(C, m**d)
        W = Y - Xc[:, None, :]
        env = normc * np.exp(-0.5 * lam**2 * np.sum(W * W, axis=-1))
        ph = np.sum(Xic[:, None, :] * W, axis=-1) + gauge.phase(
            t, Y, Xc[:, None, :] + np.zeros_like(Y))
        packet = env * np.exp(1j * ph)
        yield sel, idx, Y, W, packet


def save_coefficients(path, coeffs: PhaseSpaceCoefficients, meta=None):
    """Coefficient dump: one JSON header line + raw float64 (re, im) pairs."""
    f = coeffs.frame
    header = {
        "format": "gfd",
        "kind": "coefficients",
        "version": 1,
        "shape": list(coeffs.values.shape),
        "lam": f.lam,
        "dx": f.dx,
        "dxi": f.dxi,
    }
    if meta:
        header["meta"] = meta
    flat = np.ascontiguousarray(coeffs.values, dtype=np.complex128)
    pairs = np.empty(flat.size * 2, dtype="<f8")
    pairs[0::2] = flat.real.ravel()
    pairs[1::2] = flat.imag.ravel()
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        fh.write(pairs.tobytes())


def load_coefficients(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        raw = np.frombuffer(fh.read(), dtype="<f8")
    shape = tuple(header["shape"])
    values = (raw[0::2] + 1j * raw[1::2]).reshape(shape)
    return values, header
