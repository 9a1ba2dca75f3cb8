"""Magnetic Weyl quantisation on the grid.

For the kinetic family h = kappa |eta|^2 + V the magnetic Weyl operator
reduces exactly to kappa sum_j P_j^2 + V with the covariant derivative
P_j = -i d_j - A_j (the conversion symbol between Weyl and Kohn-Nirenberg
quantisation vanishes for symbols depending on y and eta separately), and is
applied with FFT derivatives.  ``apply_op_direct`` is the brute-force
oscillatory-integral oracle

    Op(h) u(y) = (2 pi)^-d  int int  e^{i (y-y').eta} e^{-i phi(y', y)}
                 h((y+y')/2, eta) u(y') dy' deta          (Weyl midpoint),

with the eta integral truncated to the grid Nyquist box and evaluated by
Gauss-Legendre quadrature; Kohn-Nirenberg replaces the midpoint by y.
It is restricted to d = 2 and small grids.
"""

from __future__ import annotations

import numpy as np

from .errors import FamilyError, SizeGuardError
from .fields import GaugeData, gauss_legendre_01
from .flow import SymbolH
from .grids import GridFunction

__all__ = ["covariant_derivative", "apply_op", "apply_op_direct", "kn_correction"]

_DIRECT_MAX_N = 64


def _spectral_halfderivative(values, grid, j):
    """-i d_j of grid values by FFT."""
    k = grid.freq_axis()
    shape = [1] * grid.dim
    shape[j] = grid.n
    mult = k.reshape(shape)
    return np.fft.ifftn(mult * np.fft.fftn(values))


def covariant_derivative(gauge: GaugeData, t, u: GridFunction, j):
    """P_j u = (-i d_j - A_j) u with the ambient (possibly shifted) potential."""
    A = gauge.potential_ambient(t, u.grid.mesh())
    vals = _spectral_halfderivative(u.values, u.grid, j) - A[..., j] * u.values
    return GridFunction(u.grid, vals)


def apply_op(gauge: GaugeData, symbol: SymbolH, t, u: GridFunction):
    """Op(h) u for the kinetic_potential family (exact Weyl form)."""
    if symbol.family != "kinetic_potential":
        raise FamilyError(
            "apply_op handles the kinetic_potential family; use apply_op_direct")
    mesh = u.grid.mesh()
    A = gauge.potential_ambient(t, mesh)
    out = np.zeros_like(u.values)
    for j in range(u.grid.dim):
        pj = _spectral_halfderivative(u.values, u.grid, j) - A[..., j] * u.values
        pj = _spectral_halfderivative(pj, u.grid, j) - A[..., j] * pj
        out += pj
    out *= symbol.kappa
    if symbol.V is not None:
        out += symbol.V(mesh) * u.values
    return GridFunction(u.grid, out)


def apply_op_direct(gauge: GaugeData, symbol_or_terms, t, u: GridFunction,
                    eta_nodes=None, kn=False, row_chunk=1024):
    """Brute-force quantisation oracle (d = 2, n <= 64).

    ``symbol_or_terms`` is a SymbolH exposing separable terms, or directly a
    list of (f, g) pairs with f a callable of points (or None for 1) and g a
    callable of eta points (or None for 1)."""
    grid = u.grid
    if grid.dim != 2:
        raise SizeGuardError("apply_op_direct supports d = 2 only")
    if grid.n > _DIRECT_MAX_N:
        raise SizeGuardError(f"apply_op_direct guard: n = {grid.n} > {_DIRECT_MAX_N}")
    if isinstance(symbol_or_terms, SymbolH):
        terms = symbol_or_terms.separable_terms(t)
        if terms is None:
            raise FamilyError("symbol provides no separable terms for the oracle")
    else:
        terms = symbol_or_terms

    n, delta = grid.n, grid.step
    K = np.pi / delta  # Nyquist half-width
    Q = eta_nodes if eta_nodes is not None else 2 * n
    s01, w01 = gauss_legendre_01(Q)
    eta = -K + 2.0 * K * s01
    weta = 2.0 * K * w01

    # pair-difference transforms of the eta factors, G(D1, D2)
    dvals = delta * np.arange(-(n - 1), n)
    E = np.exp(1j * np.outer(dvals, eta)) * weta  # (2n-1, Q)
    EM = np.stack(np.meshgrid(eta, eta, indexing="ij"), axis=-1)  # (Q, Q, 2)
    Gs, fs = [], []
    for f, g in terms:
        M = np.ones((Q, Q)) if g is None else np.asarray(g(EM), dtype=complex)
        Gs.append(E @ M @ E.T)
        fs.append(f)

    ax = grid.axis()
    Yall = grid.mesh().reshape(n * n, 2)
    J1, J2 = divmod(np.arange(n * n), n)
    uflat = u.values.reshape(n * n)
    out = np.zeros(n * n, dtype=complex)
    pref = (2.0 * np.pi) ** (-2) * delta**2
    for lo in range(0, n * n, row_chunk):
        rows = np.arange(lo, min(lo + row_chunk, n * n))
        I1, I2 = divmod(rows, n)
        Yr = Yall[rows]
        # phase phi(y', y): integration variable y' first, base point y second
        Yp = np.broadcast_to(Yall[None, :, :], (rows.size, n * n, 2))
        phi = gauge.phase(t, Yp, Yr[:, None, :] + np.zeros_like(Yp))
        kern = np.zeros((rows.size, n * n), dtype=complex)
        d1 = I1[:, None] - J1[None, :] + (n - 1)
        d2 = I2[:, None] - J2[None, :] + (n - 1)
        for f, G in zip(fs, Gs):
            block = G[d1, d2]
            if f is not None:
                pts = Yr[:, None, :] + np.zeros_like(Yp)
                pts = pts if kn else 0.5 * (pts + Yp)
                block = block * f(pts)
            kern += block
        out[rows] = pref * (np.exp(-1j * phi) * kern) @ uflat
    return GridFunction(grid, out.reshape(n, n))


def kn_correction(symbol: SymbolH):
    """Conversion symbol Weyl -> Kohn-Nirenberg, truncated at |alpha| <= 2.

    Op(a) = Op_KN(a + c) with c = sum_{|alpha|>=1} (1/|alpha|!) 2^{-|alpha|}
    (D_y^alpha d_eta^alpha a); identically zero whenever a has no mixed
    y/eta dependence (in particular for the kinetic_potential family).
    """
    d = symbol.dim
    if symbol.family == "kinetic_potential":
        return SymbolH("generic", dim=d,
                       eval_fn=lambda t, y, eta: np.zeros(
                           np.asarray(y).shape[:-1], dtype=complex),
                       name="kn-correction(0)")

    def correction(t, y, eta):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape[:-1], dtype=complex)
        # |alpha| = 1: (1/2) sum_j (-i) d_y_j d_eta_j a
        for j in range(d):
            a = tuple(1 if i == j else 0 for i in range(d))
            out += 0.5 * (-1j) * symbol.mixed_partial(a, a, t, y, eta)
        # |alpha| = 2: (1/2!) (1/4) (-i)^2 over multi-indices e_j + e_k, j <= k
        for j in range(d):
            for k in range(j, d):
                a = tuple((1 if i == j else 0) + (1 if i == k else 0)
                          for i in range(d))
                out += (1.0 / 2.0) * 0.25 * (-1.0) * symbol.mixed_partial(
                    a, a, t, y, eta)
        return out

    return SymbolH("generic", dim=d, eval_fn=correction,
                   name=f"kn-correction({symbol.name})")
