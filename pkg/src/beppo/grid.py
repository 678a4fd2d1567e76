"""Periodic-box discretization of R^d with spectral calculus.

Fields are sampled on the uniform grid over [-L, L)^d with N points per
axis, x_j = -L + j*h, h = 2L/N, so the origin sits at index N/2 on every
axis.  Transforms use the unitary DFT convention (coefficients are the raw
FFT divided by N^{d/2}); wavevectors are k = (pi/L) * {-N/2, ..., N/2 - 1}
per axis, stored in FFT order.  Quadrature is the rectangle rule on the
uniform grid, which is spectrally accurate for smooth periodic data.

Everything here is a pure function of immutable inputs and safe to call
concurrently.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "Grid",
    "Field",
    "SpectralField",
    "forward_transform",
    "inverse_transform",
    "spectral_derivative",
    "gradient",
    "divergence",
    "lp_norm",
    "magnitude_lp",
    "convolve",
    "write_field",
    "read_field",
]

FIELD_MAGIC = b"BEPPO1\x00"
_HEADER_FMT = "<7sIIId"


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on [-L, L)^d carrying m-component fields."""

    d: int
    m: int
    L: float
    N: int

    def __post_init__(self) -> None:
        if not 1 <= self.d <= 4:
            raise ValueError(f"spatial dimension must be in 1..4, got {self.d}")
        if self.m < 1:
            raise ValueError(f"component count must be >= 1, got {self.m}")
        if not self.L > 0:
            raise ValueError(f"box half-width must be positive, got {self.L}")
        n = self.N
        if n < 4 or n & (n - 1):
            raise ValueError(f"N must be a power of two >= 4, got {n}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def npoints(self) -> int:
        return self.N**self.d

    @property
    def origin_index(self) -> tuple[int, ...]:
        return (self.N // 2,) * self.d

    def compatible(self, other: "Grid") -> bool:
        """Same box and sampling; component counts may differ."""
        return (self.d, self.N) == (other.d, other.N) and self.L == other.L

    def with_m(self, m: int) -> "Grid":
        return Grid(self.d, m, self.L, self.N)

    def axis_coords(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.N)

    # The cached arrays below are shared between callers; treat as read-only.

    @cached_property
    def coords(self) -> np.ndarray:
        """Sample coordinates, shape (d, N, ..., N)."""
        ax = self.axis_coords()
        return np.stack(np.meshgrid(*(ax,) * self.d, indexing="ij"))

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(np.sum(self.coords**2, axis=0))

    @cached_property
    def wavevectors(self) -> np.ndarray:
        """Physical wavevectors in FFT order, shape (d, N, ..., N)."""
        k1 = 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.h)
        return np.stack(np.meshgrid(*(k1,) * self.d, indexing="ij"))

    @cached_property
    def derivative_wavevectors(self) -> np.ndarray:
        """Wavevectors with the Nyquist mode zeroed (keeps derivatives real)."""
        k1 = 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.h)
        k1[self.N // 2] = 0.0
        return np.stack(np.meshgrid(*(k1,) * self.d, indexing="ij"))


def _spatial_axes(grid: Grid, lead: int = 1) -> tuple[int, ...]:
    return tuple(range(lead, lead + grid.d))


@dataclass(frozen=True)
class Field:
    """Real m-component field sampled on a grid, values shape (m, N, ..., N)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        want = (self.grid.m, *self.grid.shape)
        if v.shape != want:
            if v.shape == (self.grid.m, self.grid.npoints):
                v = v.reshape(want)
            else:
                raise ValueError(f"values shape {v.shape} incompatible with {want}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", v)

    def magnitude(self) -> np.ndarray:
        """Pointwise Euclidean magnitude over the m components."""
        return np.sqrt(np.einsum("i...,i...->...", self.values, self.values))


@dataclass(frozen=True)
class SpectralField:
    """Fourier coefficients of a real field under the unitary convention.

    Coefficients of -k are complex conjugates of those of k whenever the
    underlying field is real; `conjugate_symmetry_defect` measures this.
    """

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.coeffs, dtype=np.complex128)
        want = (self.grid.m, *self.grid.shape)
        if c.shape != want:
            raise ValueError(f"coeffs shape {c.shape} incompatible with {want}")
        if not np.all(np.isfinite(c)):
            raise ValueError("spectral field contains non-finite coefficients")
        object.__setattr__(self, "coeffs", c)

    def conjugate_symmetry_defect(self) -> float:
        flipped = self.coeffs.copy()
        for ax in _spatial_axes(self.grid):
            flipped = np.flip(np.roll(flipped, -1, axis=ax), axis=ax)
        scale = np.max(np.abs(self.coeffs))
        if scale == 0.0:
            return 0.0
        return float(np.max(np.abs(self.coeffs - np.conj(flipped))) / scale)


def forward_transform(field: Field) -> SpectralField:
    """Unitary DFT of a field; a constant c maps to c * N^{d/2} at k = 0."""
    g = field.grid
    if not np.all(np.isfinite(field.values)):
        raise ValueError("cannot transform a field with non-finite values")
    co = np.fft.fftn(field.values, axes=_spatial_axes(g)) / g.N ** (g.d / 2.0)
    return SpectralField(g, co)


def inverse_transform(spectral: SpectralField) -> Field:
    """Inverse unitary DFT; the imaginary residue of real data is dropped."""
    g = spectral.grid
    vals = np.fft.ifftn(spectral.coeffs, axes=_spatial_axes(g)) * g.N ** (g.d / 2.0)
    return Field(g, vals.real)


def spectral_derivative(field: Field, axis: int) -> Field:
    """Exact derivative of the trigonometric interpolant along a 1-based axis."""
    g = field.grid
    if not 1 <= axis <= g.d:
        raise ValueError(f"axis must be in 1..{g.d}, got {axis}")
    k = g.derivative_wavevectors[axis - 1]
    co = np.fft.fftn(field.values, axes=_spatial_axes(g))
    vals = np.fft.ifftn(1j * k * co, axes=_spatial_axes(g)).real
    return Field(g, vals)


def gradient(field: Field) -> np.ndarray:
    """All first partials at once, shape (m, d, N, ..., N)."""
    g = field.grid
    co = np.fft.fftn(field.values, axes=_spatial_axes(g))
    K = g.derivative_wavevectors
    out = np.empty((g.m, g.d, *g.shape))
    for a in range(g.d):
        out[:, a] = np.fft.ifftn(1j * K[a] * co, axes=_spatial_axes(g)).real
    return out


def divergence(grid: Grid, flux_values: np.ndarray) -> np.ndarray:
    """Divergence of an (m, d, ...) array of fluxes, shape (m, ...)."""
    if flux_values.shape[:2] != (grid.m, grid.d) or flux_values.shape[2:] != grid.shape:
        raise ValueError("flux array shape incompatible with grid")
    co = np.fft.fftn(flux_values, axes=_spatial_axes(grid, lead=2))
    K = grid.derivative_wavevectors
    acc = np.einsum("a...,ma...->m...", 1j * K, co)
    return np.fft.ifftn(acc, axes=_spatial_axes(grid)).real


def magnitude_lp(mag: np.ndarray, grid: Grid, p: float) -> float:
    """L^p quadrature norm of a nonnegative pointwise-magnitude array."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if np.isinf(p):
        return float(np.max(mag))
    return float((np.sum(mag**p) * grid.h**grid.d) ** (1.0 / p))


def lp_norm(field: Field, p: float) -> float:
    """L^p norm, Euclidean over components, rectangle rule over the box."""
    return magnitude_lp(field.magnitude(), field.grid, p)


def convolve(field: Field, kernel: Field) -> Field:
    """Periodic convolution (f * g)(x) = sum_y f(y) g(x - y) h^d.

    Kernel samples are read on the same centered coordinates as the field
    (origin at index N/2), so convolving with a unit-discrete-mass kernel
    is a weighted average.  A kernel with a single component broadcasts
    over all components of the field.
    """
    g = field.grid
    if not g.compatible(kernel.grid):
        raise ValueError("field and kernel live on different grids")
    if kernel.grid.m not in (1, g.m):
        raise ValueError(f"kernel must have 1 or {g.m} components, got {kernel.grid.m}")
    sp = _spatial_axes(g)
    # shift kernel so that displacement zero sits at index zero
    kern = np.fft.ifftshift(kernel.values, axes=sp)
    fv = np.fft.fftn(field.values, axes=sp)
    kv = np.fft.fftn(kern, axes=sp)
    vals = np.fft.ifftn(fv * kv, axes=sp).real * g.h**g.d
    return Field(g, vals)


def write_field(field: Field, path) -> None:
    """Self-describing binary: magic, u32 d/m/N, f64 L, then f64 samples."""
    g = field.grid
    header = struct.pack(_HEADER_FMT, FIELD_MAGIC, g.d, g.m, g.N, g.L)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_field(path) -> Field:
    with open(path, "rb") as fh:
        data = fh.read()
    hsize = struct.calcsize(_HEADER_FMT)
    if len(data) < hsize:
        raise ValueError(f"{path}: truncated field file")
    magic, d, m, n, box = struct.unpack_from(_HEADER_FMT, data, 0)
    if magic != FIELD_MAGIC:
        raise ValueError(f"{path}: bad magic, not a field file")
    grid = Grid(d, m, box, n)
    count = m * n**d
    if len(data) != hsize + 8 * count:
        raise ValueError(f"{path}: expected {count} samples, file size mismatch")
    vals = np.frombuffer(data, dtype="<f8", count=count, offset=hsize)
    return Field(grid, vals.reshape(m, *grid.shape).copy())
