"""Homogeneous Sobolev classes: fields modulo additive constants.

A class [u] = {u + c} is stored through its canonical representative, the
member whose box mean vanishes per component (the k = 0 Fourier mode, so
the normalization is free with the transform).  The seminorm
||grad u||_{L^p} is then a norm on classes, and every operation here is
invariant under constant shifts of the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Field, Grid, convolve, gradient, magnitude_lp

__all__ = [
    "HomogeneousClass",
    "Mollifier",
    "Decomposition",
    "DenyLionsValues",
    "canonicalize",
    "seminorm",
    "mollifier",
    "decompose",
    "density_sequence",
    "deny_lions_example",
    "d1_counterexample",
    "w11_mean_invariant",
]

MEAN_RTOL = 1e-12


@dataclass(frozen=True)
class HomogeneousClass:
    """Equivalence class of a field modulo per-component constants.

    `rep` is the zero-box-mean representative; `p` is the integrability
    exponent of the gradient that norms the class.
    """

    rep: Field
    p: float = 2.0

    def __post_init__(self) -> None:
        if self.p < 1:
            raise ValueError(f"exponent p must be >= 1, got {self.p}")
        v = self.rep.values
        means = v.mean(axis=tuple(range(1, v.ndim)))
        scale = float(np.max(np.abs(v)))
        if np.any(np.abs(means) > MEAN_RTOL * scale + 1e-300):
            raise ValueError("representative is not zero-mean; build via canonicalize()")

    @property
    def grid(self) -> Grid:
        return self.rep.grid


def canonicalize(field: Field, p: float = 2.0) -> HomogeneousClass:
    """Pick the zero-box-mean member of [field].

    Exactly idempotent: a representative already within the zero-mean
    tolerance is passed through bit-identically.
    """
    v = field.values
    means = v.mean(axis=tuple(range(1, v.ndim)), keepdims=True)
    scale = float(np.max(np.abs(v)))
    if np.all(np.abs(means) <= MEAN_RTOL * scale + 1e-300):
        return HomogeneousClass(field, p)
    return HomogeneousClass(Field(field.grid, v - means), p)


def seminorm(cls: HomogeneousClass) -> float:
    """L^p norm of the full gradient, Euclidean over all m*d partials."""
    G = gradient(cls.rep)
    mag = np.sqrt(np.einsum("ia...,ia...->...", G, G))
    return magnitude_lp(mag, cls.grid, cls.p)


@dataclass(frozen=True)
class Mollifier:
    """Smooth bump supported in B_R with unit discrete mass and 0 <= eta <= 1."""

    grid: Grid
    radius: float
    profile: np.ndarray

    def as_field(self) -> Field:
        return Field(self.grid, self.profile[None])

    def discrete_mass(self) -> float:
        return float(self.profile.sum() * self.grid.h**self.grid.d)


def mollifier(grid: Grid, radius: float) -> Mollifier:
    """Build the standard bump exp(-1/(1 - (r/R)^2)) normalized to unit mass.

    The radius doubles until the normalized peak is <= 1, so the profile is
    a genuine sub-unit probability weight on the grid.
    """
    if radius <= 0:
        raise ValueError(f"mollifier radius must be positive, got {radius}")
    base = grid.with_m(1)
    R = float(radius)
    for _ in range(64):
        if R >= base.L:
            raise ValueError("mollifier support must stay strictly inside the box")
        prof = np.zeros(base.shape)
        r2 = (base.radius / R) ** 2
        inside = r2 < 1.0
        prof[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
        mass = prof.sum() * base.h**base.d
        if mass > 0.0:
            eta = prof / mass
            if eta.max() <= 1.0:
                return Mollifier(base, R, eta)
        R *= 2.0
    raise ValueError("mollifier normalization did not converge on this grid")


@dataclass(frozen=True)
class Decomposition:
    """Split of a class into a smooth part and a W^{1,p} remainder."""

    smooth_part: Field
    integrable_part: Field


def decompose(cls: HomogeneousClass, eta: Mollifier) -> Decomposition:
    """Mollifier split: smooth = eta * u (anchored at 0 for p >= d), rest = u - eta * u.

    The two parts sum to the representative up to a per-component constant.
    Because eta is a sub-unit probability weight, the discrete bounds
    ||grad smooth||_p <= ||grad u||_p and ||grad smooth||_inf <= ||grad u||_p
    hold exactly (Jensen on the convolution weights).
    """
    g = cls.grid
    if not g.compatible(eta.grid):
        raise ValueError("mollifier sampled on an incompatible grid")
    conv = convolve(cls.rep, eta.as_field())
    smooth_vals = conv.values
    if cls.p >= g.d:
        origin = (slice(None), *g.origin_index)
        anchor = conv.values[origin].reshape((g.m,) + (1,) * g.d)
        smooth_vals = smooth_vals - anchor
    integ_vals = cls.rep.values - conv.values
    return Decomposition(Field(g, smooth_vals), Field(g, integ_vals))


def _radial_cutoff(t: np.ndarray) -> np.ndarray:
    """C^1 cutoff: 1 for t <= 1, 0 for t >= 2, cosine ramp between."""
    out = np.ones_like(t)
    out[t >= 2.0] = 0.0
    mid = (t > 1.0) & (t < 2.0)
    out[mid] = 0.5 * (1.0 + np.cos(np.pi * (t[mid] - 1.0)))
    return out


def density_sequence(cls: HomogeneousClass, n: int) -> Field:
    """Compactly supported approximant u_n = cutoff(|x|/n) * (u - annulus mean).

    The annulus mean over n <= |x| < 2n recenters the class so that the
    cutoff-gradient term is controlled by the tail of grad u.
    """
    g = cls.grid
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    if 2.0 * n >= g.L:
        raise ValueError(f"annulus B_{{{2 * n}}} exits the box of half-width {g.L}")
    if g.d == 1 and cls.p <= 1:
        raise ValueError("no density sequence for d = 1, p = 1")
    r = g.radius
    ann = (r >= n) & (r < 2.0 * n)
    if not ann.any():
        raise ValueError("annulus contains no grid points; grid too coarse")
    avgs = cls.rep.values[:, ann].mean(axis=1)
    cut = _radial_cutoff(r / n)
    vals = cut * (cls.rep.values - avgs.reshape((g.m,) + (1,) * g.d))
    return Field(g, vals)


# Dedicated 1-d quadrature for the two closed-form examples; their supports
# are compact and the integrands piecewise constant, so the midpoint rule on
# the support is an exact oracle.
_QUAD_POINTS = 4096


def _midpoints(a: float, b: float) -> tuple[np.ndarray, float]:
    dx = (b - a) / _QUAD_POINTS
    return a + (np.arange(_QUAD_POINTS) + 0.5) * dx, dx


@dataclass(frozen=True)
class DenyLionsValues:
    sup_value: float
    grad_norm: float


def deny_lions_example(n: int, p: float) -> DenyLionsValues:
    """Tent functions u_n = n * max(0, 1 - |x|/n^3): sup grows, gradient norm shrinks."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if p < 1 or np.isinf(p):
        raise ValueError(f"need a finite exponent p >= 1, got {p}")
    half = float(n) ** 3
    x, dx = _midpoints(0.0, half)
    slope = float(n) ** -2  # |u_n'| on (0, n^3)
    integral = np.sum(np.full_like(x, slope) ** p) * dx
    nodes = np.linspace(0.0, half, _QUAD_POINTS + 1)
    sup = float(np.max(n * np.maximum(0.0, 1.0 - nodes / half)))
    return DenyLionsValues(sup, float((2.0 * integral) ** (1.0 / p)))


def d1_counterexample(a: float, b: float, n: int, p: float) -> float:
    """L^p distance between the step-gradient approximant's slope and chi_(a,b).

    The approximant spreads a compensating slope -1/n over (b, b + n(b-a));
    the distance decays for p > 1 but is constant in n at p = 1.
    """
    if b <= a:
        raise ValueError(f"degenerate interval ({a}, {b})")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if p < 1 or np.isinf(p):
        raise ValueError(f"need a finite exponent p >= 1, got {p}")
    width = n * (b - a)
    x, dx = _midpoints(b, b + width)
    integral = np.sum(np.full_like(x, 1.0 / n) ** p) * dx
    return float(integral ** (1.0 / p))


def w11_mean_invariant(field: Field, wrap: bool = True) -> float:
    """Integral of u' over the box by telescoping difference quotients.

    With wrap=True the periodic wrap term is included and the loop integral
    vanishes for every sampled field (the torus cannot see the L^1
    obstruction).  With wrap=False the samples are read as a restriction of
    a whole-line function to the window and the open-interval sum returns
    u(right) - u(left), e.g. 1 for the unit ramp.
    """
    g = field.grid
    if g.d != 1:
        raise ValueError("mean invariant is defined for d = 1 only")
    if g.m != 1:
        raise ValueError("mean invariant expects a scalar field")
    v = field.values[0]
    total = float(np.sum(np.diff(v)))
    if wrap:
        total += float(v[0] - v[-1])
    return total
