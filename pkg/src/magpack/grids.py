"""Uniform periodic grids, grid functions, and the .gfd dump format."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, OutOfDomainError

__all__ = ["SpatialGrid", "GridFunction", "save_gfd", "load_gfd"]

GFD_VERSION = 1


@dataclass(frozen=True)
class SpatialGrid:
    """Tensor grid on [-L, L)^d with n points per axis, n a power of two."""

    n: int
    half_width: float
    dim: int = 2

    def __post_init__(self):
        if self.n < 4 or (self.n & (self.n - 1)) != 0:
            raise ConfigError(f"grid size must be a power of two >= 4, got {self.n}")
        if self.half_width <= 0:
            raise ConfigError("half_width must be positive")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")

    @property
    def step(self):
        return 2.0 * self.half_width / self.n

    @property
    def shape(self):
        return (self.n,) * self.dim

    def axis(self):
        return -self.half_width + self.step * np.arange(self.n)

    def mesh(self):
        """Coordinates, shape (n, ..., n, d)."""
        ax = self.axis()
        grids = np.meshgrid(*([ax] * self.dim), indexing="ij")
        return np.stack(grids, axis=-1)

    def freq_axis(self):
        """Angular FFT frequencies per axis."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.step)

    def cell_volume(self):
        return self.step**self.dim

    def inner(self, u, v):
        return self.cell_volume() * np.vdot(u, v)

    def norm(self, u):
        return float(np.sqrt(self.cell_volume()) * np.linalg.norm(u))

    def index_of(self, x):
        """Nearest-node index of a point, per axis."""
        x = np.asarray(x, dtype=float)
        idx = np.rint((x + self.half_width) / self.step).astype(int)
        return idx

    def taper_mask(self, fraction=0.1):
        """Smooth cosine taper equal to 1 on the interior, 0 at the boundary."""
        ax = self.axis()
        edge = fraction * 2.0 * self.half_width
        m1 = np.ones_like(ax)
        r = self.half_width - np.abs(ax)
        ramp = r < edge
        m1[ramp] = 0.5 * (1.0 - np.cos(np.pi * r[ramp] / edge))
        out = m1
        for _ in range(self.dim - 1):
            out = np.multiply.outer(out, m1)
        return out

    def boundary_mass(self, values, fraction=0.1):
        """Fraction of |u|^2 mass in the outer ``fraction`` shell."""
        total = np.sum(np.abs(values) ** 2)
        if total == 0.0:
            return 0.0
        ax = np.abs(self.axis())
        inner = ax < (1.0 - fraction) * self.half_width
        mask = inner
        for _ in range(self.dim - 1):
            mask = np.multiply.outer(mask, inner)
        return float(np.sum(np.abs(values[~mask]) ** 2) / total)


@dataclass
class GridFunction:
    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.grid.shape:
            raise OutOfDomainError(
                f"values shape {self.values.shape} != grid shape {self.grid.shape}")

    @classmethod
    def from_callable(cls, grid, fn):
        return cls(grid, np.asarray(fn(grid.mesh()), dtype=complex))

    def copy(self):
        return GridFunction(self.grid, self.values.copy())

    def norm(self):
        return self.grid.norm(self.values)

    def inner(self, other):
        return self.grid.inner(self.values, other.values)


def save_gfd(path, gf: GridFunction, meta=None):
    """One JSON header line, then raw little-endian float64 (re, im) pairs
    in row-major order."""
    header = {
        "format": "gfd",
        "version": GFD_VERSION,
        "dim": gf.grid.dim,
        "n": gf.grid.n,
        "half_width": gf.grid.half_width,
    }
    if meta:
        header["meta"] = meta
    flat = np.ascontiguousarray(gf.values, dtype=np.complex128)
    pairs = np.empty(flat.size * 2, dtype="<f8")
    pairs[0::2] = flat.real.ravel()
    pairs[1::2] = flat.imag.ravel()
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        fh.write(pairs.tobytes())


def load_gfd(path):
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: not a gfd file ({exc})") from exc
        if header.get("format") != "gfd":
            raise ConfigError(f"{path}: missing gfd format marker")
        raw = np.frombuffer(fh.read(), dtype="<f8")
    dim, n = header["dim"], header["n"]
    count = n**dim
    if raw.size != 2 * count:
        raise ConfigError(f"{path}: payload has {raw.size} doubles, expected {2*count}")
    values = (raw[0::2] + 1j * raw[1::2]).reshape((n,) * dim)
    grid = SpatialGrid(n=n, half_width=header["half_width"], dim=dim)
    return GridFunction(grid, values), header
