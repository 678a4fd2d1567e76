"""Admissible right-hand sides for the weak form.

A functional is given either by a density f (pairing integral f . u, well
defined on classes only when f has zero mean) or by a flux F with m*d
components, pairing integral F : grad u, which annihilates constants by
construction.  The Fourier-side diagnostics follow the criterion that
fhat(k)/|k| stays bounded near k = 0 and square-summable overall.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .grid import Field, gradient, magnitude_lp
from .quotient import HomogeneousClass

__all__ = [
    "AdmissibilityError",
    "FunctionalSpec",
    "AdmissibilityReport",
    "density_functional",
    "flux_functional",
    "apply",
    "riesz_flux",
    "admissibility_report",
]

ZERO_MEAN_RTOL = 1e-10


class AdmissibilityError(RuntimeError):
    """Right-hand side rejected: the pairing would depend on the representative."""


@dataclass(frozen=True)
class FunctionalSpec:
    """Right-hand side, either a density or a flux.

    Flux fields store m*d components ordered (i, alpha) row-major, so the
    flux paired with component i lives in rows i*d .. i*d + d - 1.
    """

    kind: str
    field: Field

    def __post_init__(self) -> None:
        if self.kind not in ("density", "flux"):
            raise ValueError(f"kind must be 'density' or 'flux', got {self.kind!r}")
        if self.kind == "flux" and self.field.grid.m % self.field.grid.d:
            raise ValueError("flux field needs m*d components")

    @property
    def m(self) -> int:
        """Component count of the classes this functional pairs with."""
        if self.kind == "density":
            return self.field.grid.m
        return self.field.grid.m // self.field.grid.d


def density_functional(f: Field) -> FunctionalSpec:
    return FunctionalSpec("density", f)


def flux_functional(F: Field) -> FunctionalSpec:
    return FunctionalSpec("flux", F)


def _component_integrals(f: Field) -> np.ndarray:
    g = f.grid
    return f.values.sum(axis=tuple(range(1, 1 + g.d))) * g.h**g.d


def _require_zero_mean(f: Field, what: str) -> None:
    l1 = magnitude_lp(f.magnitude(), f.grid, 1.0)
    if l1 == 0.0:
        return
    rel = float(np.linalg.norm(_component_integrals(f))) / l1
    if rel > ZERO_MEAN_RTOL:
        raise AdmissibilityError(
            f"{what} has nonzero mean (relative size {rel:.3e}); "
            "the class pairing is ill-defined"
        )


def apply(l: FunctionalSpec, cls: HomogeneousClass) -> float:
    """Evaluate the functional on a class; invariant under constant shifts."""
    g = cls.grid
    if not g.compatible(l.field.grid):
        raise ValueError("functional and class live on different grids")
    if l.m != g.m:
        raise ValueError(f"functional pairs {l.m}-component classes, got {g.m}")
    if l.kind == "density":
        _require_zero_mean(l.field, "density right-hand side")
        return float(np.sum(l.field.values * cls.rep.values) * g.h**g.d)
    G = gradient(cls.rep)
    F = l.field.values.reshape(g.m, g.d, *g.shape)
    return float(np.einsum("ia...,ia...->", F, G) * g.h**g.d)


def riesz_flux(f: Field) -> tuple[Field, float]:
    """Flux representation of a zero-mean density: Fhat = i k fhat / |k|^2.

    The returned flux satisfies -div F = f to spectral accuracy, and the
    second return value is its L^2 norm.
    """
    g = f.grid
    _require_zero_mean(f, "density")
    sp = tuple(range(1, 1 + g.d))
    fh = np.fft.fftn(f.values, axes=sp)
    K = g.derivative_wavevectors
    k2 = np.sum(K**2, axis=0)
    inv = np.zeros_like(k2)
    np.divide(1.0, k2, out=inv, where=k2 > 0)
    Fh = 1j * K[None, :] * fh[:, None] * inv
    vals = np.fft.ifftn(Fh, axes=tuple(range(2, 2 + g.d))).real
    flux = Field(g.with_m(g.m * g.d), vals.reshape(g.m * g.d, *g.shape))
    norm = magnitude_lp(flux.magnitude(), g, 2.0)
    return flux, norm


@dataclass(frozen=True)
class AdmissibilityReport:
    """Diagnostics for pairing a density against homogeneous classes.

    zero_mean: |integral of f| relative to ||f||_{L^1}.
    moment: integral of |x| |f(x)| over the box; tail_fraction is the share
        of the L^1 mass outside |x| > L/2 (a decay diagnostic).
    fourier_slope: max of |fhat(k)|/|k| over the low 10% of the spectrum,
        with fhat on the continuum scale fhat(k) = integral f exp(-ikx).
    lipschitz_at_zero: finite-difference slope of fhat at k = 0.
    flux_norm: (sum over k != 0 of |fhat|^2/|k|^2)^{1/2} on the quadrature
        scale, equal to the L^2 norm of the riesz_flux representation.
    """

    zero_mean: float
    moment: float
    tail_fraction: float
    fourier_slope: float
    lipschitz_at_zero: float
    flux_norm: float

    def as_dict(self) -> dict:
        return asdict(self)


def admissibility_report(f: Field) -> AdmissibilityReport:
    g = f.grid
    hd = g.h**g.d
    mag = f.magnitude()
    l1 = float(mag.sum() * hd)
    ints = _component_integrals(f)
    zero_mean = float(np.linalg.norm(ints)) / l1 if l1 > 0 else 0.0
    r = g.radius
    moment = float(np.sum(r * mag) * hd)
    total_mass = float(mag.sum())
    tail = float(mag[r > g.L / 2.0].sum() / total_mass) if total_mass > 0 else 0.0

    sp = tuple(range(1, 1 + g.d))
    raw = np.fft.fftn(f.values, axes=sp)
    fc = raw * hd  # continuum-scale transform
    magk = np.sqrt(np.einsum("i...,i...->...", np.abs(fc), np.abs(fc)))
    kk = np.sqrt(np.sum(g.wavevectors**2, axis=0))
    kcut = 0.1 * np.pi * g.N / (2.0 * g.L)
    sel = (kk > 0) & (kk <= kcut)
    if not sel.any():
        sel = kk == kk[kk > 0].min()
    fourier_slope = float(np.max(magk[sel] / kk[sel]))

    origin = (slice(None),) + (0,) * g.d
    f0 = fc[origin]
    kfund = np.pi / g.L
    slopes = []
    for ax in range(g.d):
        idx = (slice(None),) + tuple(1 if a == ax else 0 for a in range(g.d))
        slopes.append(float(np.linalg.norm(fc[idx] - f0)) / kfund)
    lipschitz = max(slopes)

    uh = raw / g.N ** (g.d / 2.0)
    K = g.derivative_wavevectors
    k2 = np.sum(K**2, axis=0)
    pw = np.einsum("i...,i...->...", np.abs(uh), np.abs(uh))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(k2 > 0, pw / k2, 0.0)
    flux_norm = float(np.sqrt(ratio.sum() * hd))

    return AdmissibilityReport(zero_mean, moment, tail, fourier_slope, lipschitz, flux_norm)
