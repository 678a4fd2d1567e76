"""Growth and decay of homogeneous classes at large radius.

Three regimes, keyed to the gradient exponent p against the dimension d:
decay (p < d, Sobolev embedding), power |x|^{1 - 1/p} (p > d), and
log(2 + |x|) at the critical exponent p = d.  The critical case is probed
through chains of cubes whose means change by a bounded amount per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Field, convolve, gradient, magnitude_lp
from .quotient import HomogeneousClass, Mollifier, seminorm

__all__ = [
    "GrowthEnvelope",
    "Cube",
    "CubeChain",
    "ChainOscillation",
    "growth_regime",
    "envelope_values",
    "radial_sup_profile",
    "fit_growth_exponent",
    "check_envelope",
    "build_cube_chain",
    "chain_oscillation",
    "farfield_ratio",
]


@dataclass(frozen=True)
class GrowthEnvelope:
    """Fitted growth bound: measured shell sups <= constant * envelope(r)."""

    regime: str  # "decay" | "power" | "log"
    exponent: float | None
    constant: float
    gns_ratio: float | None = None


def growth_regime(p: float, d: int) -> str:
    if p < d:
        return "decay"
    if p > d:
        return "power"
    return "log"


def envelope_values(regime: str, exponent: float | None, radii: np.ndarray) -> np.ndarray:
    r = np.asarray(radii, dtype=float)
    if regime == "power":
        return r**exponent
    if regime == "log":
        return np.log(2.0 + r)
    if regime == "decay":
        return np.ones_like(r)
    raise ValueError(f"unknown regime {regime!r}")


def radial_sup_profile(field: Field, radii) -> list[tuple[float, float]]:
    """Sup of |field| over the shell r - h <= |x| < r + h for each radius."""
    g = field.grid
    r = g.radius
    mag = field.magnitude()
    out = []
    for rad in radii:
        rad = float(rad)
        if not 0.0 < rad < g.L:
            raise ValueError(f"radius {rad} outside (0, {g.L})")
        shell = (r >= rad - g.h) & (r < rad + g.h)
        if not shell.any():
            raise ValueError(f"no grid points in shell at r = {rad}; grid too coarse")
        out.append((rad, float(mag[shell].max())))
    return out


def fit_growth_exponent(profile) -> float:
    """Least-squares slope of log(sup) against log(r)."""
    r = np.array([q[0] for q in profile], dtype=float)
    s = np.array([q[1] for q in profile], dtype=float)
    if r.size < 4:
        raise ValueError(f"need at least 4 profile points, got {r.size}")
    if np.any(s <= 0.0):
        raise ValueError("profile sups must be positive for a log-log fit")
    return float(np.polyfit(np.log(r), np.log(s), 1)[0])


def _default_radii(grid) -> np.ndarray:
    lower = max(4.0 * grid.h, grid.L / 16.0)
    return np.geomspace(lower, grid.L / 2.0, 12)


def _smoothed_anchored(cls: HomogeneousClass, eta: Mollifier) -> Field:
    """eta * rep, with the value at the origin subtracted when p >= d."""
    g = cls.grid
    conv = convolve(cls.rep, eta.as_field())
    vals = conv.values
    if cls.p >= g.d:
        origin = (slice(None), *g.origin_index)
        vals = vals - conv.values[origin].reshape((g.m,) + (1,) * g.d)
    return Field(g, vals)


def check_envelope(cls: HomogeneousClass, eta: Mollifier, radii=None) -> GrowthEnvelope:
    """Measure the smoothed representative against its regime envelope.

    Returns the fitted constant C with sup(r) <= C * envelope(r) at every
    sampled radius.  In the decay regime the Sobolev-embedding quotient
    ||u0||_{L^{p*}} / ||grad u||_{L^p} is reported as well, with u0 the
    representative recentered on an outer shell.
    """
    g = cls.grid
    p, d = cls.p, g.d
    if radii is None:
        radii = _default_radii(g)
    smooth = _smoothed_anchored(cls, eta)
    prof = radial_sup_profile(smooth, radii)
    regime = growth_regime(p, d)
    exponent = 1.0 - 1.0 / p if regime == "power" else None
    r = np.array([q[0] for q in prof])
    s = np.array([q[1] for q in prof])
    env = envelope_values(regime, exponent, r)
    constant = float(np.max(s / env))
    gns = None
    if regime == "decay":
        pstar = d * p / (d - p)
        ring = (g.radius >= 0.8 * g.L) & (g.radius < 0.9 * g.L)
        shift = cls.rep.values[:, ring].mean(axis=1).reshape((g.m,) + (1,) * d)
        u0 = Field(g, cls.rep.values - shift)
        sem = seminorm(cls)
        gns = float(magnitude_lp(u0.magnitude(), g, pstar) / sem) if sem > 0 else 0.0
    return GrowthEnvelope(regime, exponent, constant, gns)


@dataclass(frozen=True)
class Cube:
    center: tuple[float, ...]
    side: float


@dataclass(frozen=True)
class CubeChain:
    """Cubes from the unit cube at 0 to the unit cube at `target`.

    All cubes are axis-aligned in the chain frame, whose first axis points
    along the segment; `frame` maps lab coordinates to chain coordinates.
    """

    cubes: tuple[Cube, ...]
    target: tuple[float, ...]
    frame: np.ndarray


def _segment_frame(e: np.ndarray) -> np.ndarray:
    """Orthogonal map sending the segment direction e to the first axis.

    Householder reflection, symmetric and involutive, so rows are the chain
    axes expressed in lab coordinates.
    """
    d = e.size
    eye = np.eye(d)
    v = e - eye[0]
    nv2 = float(v @ v)
    if nv2 < 1e-30:
        return eye
    return eye - 2.0 * np.outer(v, v) / nv2


def build_cube_chain(x) -> CubeChain:
    """Doubling-then-halving chain of cubes along the segment from 0 to x.

    Sidelengths are exact powers of two (max adjacent ratio exactly 2);
    centers are scaled so the final unit cube lands exactly at x.  Adjacent
    cubes may overlap, which only strengthens the per-step mean bound.  The
    chain length grows like log|x|.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    dist = float(np.linalg.norm(x))
    e = x / dist if dist > 0 else np.eye(x.size)[0]
    frame = _segment_frame(e)
    if dist <= 1.0:
        cubes = (Cube(tuple(np.zeros_like(x)), 1.0), Cube(tuple(x), 1.0))
        return CubeChain(cubes, tuple(x), frame)
    M = 0
    while 3.0 * (2.0 ** (M + 1) - 1.0) <= dist:
        M += 1
    peak = 2.0**M
    covered = 3.0 * (peak - 1.0)
    extra = int(np.ceil((dist - covered) / peak - 1e-12)) if dist > covered else 0
    sizes = (
        [2.0**j for j in range(M + 1)]
        + [peak] * extra
        + [2.0**j for j in range(M - 1, -1, -1)]
    )
    advances = np.array([(sizes[i] + sizes[i + 1]) / 2.0 for i in range(len(sizes) - 1)])
    gamma = dist / advances.sum()  # <= 1 by choice of `extra`
    t = np.concatenate([[0.0], np.cumsum(gamma * advances)])
    t[-1] = dist
    cubes = tuple(Cube(tuple(ti * e), s) for ti, s in zip(t, sizes))
    return CubeChain(cubes, tuple(x), frame)


@dataclass(frozen=True)
class ChainOscillation:
    total: float
    step_differences: tuple[float, ...]
    max_step: float


def chain_oscillation(cls: HomogeneousClass, chain: CubeChain) -> ChainOscillation:
    """Mean differences |(u)_{Q_j} - (u)_{Q_{j+1}}| along the chain.

    Cube means are sharp-indicator quadrature means over the grid points in
    each chain-frame cube; the total is the first-to-last mean difference.
    """
    g = cls.grid
    F = chain.frame
    pts = g.coords.reshape(g.d, -1)
    vals = cls.rep.values.reshape(g.m, -1)
    Z0 = F @ pts
    means = []
    for cube in chain.cubes:
        c = np.asarray(cube.center)
        half = 0.5 * cube.side
        extent = half * np.abs(F).sum(axis=0)  # lab-axis extent of the rotated cube
        if np.any(c - extent < -g.L) or np.any(c + extent > g.L):
            raise ValueError(f"cube at {cube.center} with side {cube.side} exits the box")
        zc = (F @ c)[:, None]
        mask = np.all(np.abs(Z0 - zc) <= half, axis=0)
        if not mask.any():
            raise ValueError(f"cube at {cube.center} contains no grid points")
        means.append(vals[:, mask].mean(axis=1))
    steps = tuple(
        float(np.linalg.norm(means[j + 1] - means[j])) for j in range(len(means) - 1)
    )
    total = float(np.linalg.norm(means[-1] - means[0]))
    return ChainOscillation(total, steps, max(steps))


def farfield_ratio(cls: HomogeneousClass, eta: Mollifier, radii=None) -> list[tuple[float, float]]:
    """Shell sups of the smooth-plus-integrable representative divided by r.

    A decaying ratio witnesses the sublinear far-field behavior u = o(|x|)
    in the averaged sense available on a truncated box.
    """
    g = cls.grid
    if radii is None:
        radii = _default_radii(g)
    conv = convolve(cls.rep, eta.as_field())
    vals = cls.rep.values
    if cls.p >= g.d:
        origin = (slice(None), *g.origin_index)
        vals = vals - conv.values[origin].reshape((g.m,) + (1,) * g.d)
    prof = radial_sup_profile(Field(g, vals), radii)
    return [(r, s / r) for r, s in prof]
