"""Analytic test fields used by experiments and tests."""

from __future__ import annotations

import numpy as np

from .grid import Field, Grid

__all__ = [
    "gaussian",
    "gradient_of_gaussian",
    "gaussian_dipole",
    "sine_mode",
    "radial_envelope_field",
    "band_limited",
    "stack_fields",
]


def gaussian(grid: Grid, sigma: float = 1.0, center=None) -> Field:
    """Scalar bump exp(-|x - c|^2 / sigma^2)."""
    g = grid.with_m(1)
    c = np.zeros(g.d) if center is None else np.asarray(center, dtype=float)
    r2 = np.sum((g.coords - c.reshape(g.d, *(1,) * g.d)) ** 2, axis=0)
    return Field(g, np.exp(-r2 / sigma**2)[None])


def gradient_of_gaussian(grid: Grid, sigma: float = 1.0, axis: int = 1) -> Field:
    """Derivative of the centered bump along a 1-based axis; zero mean."""
    g = grid.with_m(1)
    r2 = np.sum(g.coords**2, axis=0)
    x = g.coords[axis - 1]
    return Field(g, (-2.0 * x / sigma**2 * np.exp(-r2 / sigma**2))[None])


def gaussian_dipole(grid: Grid, sigma: float = 1.0, separation: float = 2.0, axis: int = 1) -> Field:
    """Difference of two bumps separated along a 1-based axis; zero mean."""
    g = grid.with_m(1)
    off = np.zeros(g.d)
    off[axis - 1] = separation / 2.0
    plus = gaussian(g, sigma, off).values
    minus = gaussian(g, sigma, -off).values
    return Field(g, plus - minus)


def sine_mode(grid: Grid, axis: int = 1) -> Field:
    """Single mode sin(pi x_axis / L); zero mean by symmetry."""
    g = grid.with_m(1)
    return Field(g, np.sin(np.pi * g.coords[axis - 1] / g.L)[None])


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def radial_envelope_field(grid: Grid, grad_exponent: float, inner=(0.5, 1.0)) -> Field:
    """Radial field whose gradient is r^{-e} cut off smoothly inside r < 1.

    u(r) is the 1-d integral of smoothstep((r - a)/(b - a)) * r^{-e}, so for
    e = 1/p the field realizes the extremal power-growth profile and for
    e = 1 the critical logarithmic one, with a finite seminorm on the box.
    """
    g = grid.with_m(1)
    a, b = inner
    r = g.radius
    rmax = float(r.max()) + g.h
    rr = np.linspace(0.0, rmax, 20001)
    with np.errstate(divide="ignore"):
        integrand = np.where(rr > a, _smoothstep((rr - a) / (b - a)) * rr ** (-grad_exponent), 0.0)
    dr = rr[1] - rr[0]
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * dr)])
    return Field(g, np.interp(r, rr, cum)[None])


def band_limited(grid: Grid, rng: np.random.Generator, band: float = 0.25) -> Field:
    """Random real field with spectrum confined to |k|_inf <= band * k_max.

    Built by filtering white noise, so the result is exactly real and has
    zero mean (the k = 0 mode is removed).
    """
    sp = tuple(range(1, 1 + grid.d))
    noise = rng.standard_normal((grid.m, *grid.shape))
    co = np.fft.fftn(noise, axes=sp)
    idx = np.abs(np.fft.fftfreq(grid.N) * grid.N)
    mesh = np.stack(np.meshgrid(*(idx,) * grid.d, indexing="ij"))
    keep = np.all(mesh <= band * (grid.N // 2), axis=0)
    keep[(0,) * grid.d] = False
    vals = np.fft.ifftn(co * keep, axes=sp).real
    return Field(grid, vals)


def stack_fields(parts: list[Field]) -> Field:
    """Combine scalar fields into one multi-component field."""
    g = parts[0].grid
    for q in parts[1:]:
        if not g.compatible(q.grid) or q.grid.m != 1:
            raise ValueError("stack_fields expects scalar fields on one grid")
    vals = np.concatenate([q.values for q in parts], axis=0)
    return Field(g.with_m(len(parts)), vals)
