"""Weak-form solvers for -div C : grad u = f on the periodic box.

Constant tensors invert exactly per wavevector through the acoustic symbol;
variable tensors run conjugate gradients on the zero-mean subspace,
preconditioned by the exact inverse for the spatially averaged tensor.  The
k = 0 mode is excluded throughout, which is the discrete realization of
solving for an equivalence class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .ellipticity import (
    EllipticityError,
    Tensor4,
    lh_constant,
    perturbation_coercivity,
    scalar_pd_constant,
    tensor_sup_norm,
)
from .functionals import FunctionalSpec, apply as apply_functional, density_functional
from .grid import Field, Grid, divergence, gradient, lp_norm
from .quotient import HomogeneousClass, canonicalize, seminorm

__all__ = [
    "ConvergenceError",
    "WeakProblem",
    "SolveReport",
    "RegularityReport",
    "bilinear",
    "apply_operator",
    "manufactured_rhs",
    "coercivity_certificate",
    "solve_constant",
    "solve_variable",
    "energy",
    "regularity_check",
]


class ConvergenceError(RuntimeError):
    """Iteration cap exceeded before the requested tolerance was met."""


@dataclass(frozen=True)
class WeakProblem:
    """A certified weak problem: tensor, right-hand side, and coercivity."""

    tensor: Tensor4
    rhs: FunctionalSpec
    grid: Grid
    coercivity_certificate: float
    certificate_source: str

    def __post_init__(self) -> None:
        if self.coercivity_certificate <= 0:
            raise EllipticityError(
                f"cannot pose the weak problem: certificate {self.coercivity_certificate} <= 0"
            )


@dataclass(frozen=True)
class SolveReport:
    solution: HomogeneousClass
    residual: float
    iterations: int
    energy: float
    constants: dict
    method: str
    energy_history: tuple = ()
    residual_history: tuple = ()


def _check_tensor_grid(C: Tensor4, grid: Grid) -> None:
    if (C.m, C.d) != (grid.m, grid.d):
        raise ValueError(
            f"tensor indices (m={C.m}, d={C.d}) do not match grid (m={grid.m}, d={grid.d})"
        )
    if C.variant == "varying" and C.components.shape[4:] != grid.shape:
        raise ValueError("varying tensor sampled on a different grid")


def _contract(C: Tensor4, G: np.ndarray) -> np.ndarray:
    if C.variant == "constant":
        return np.einsum("iajb,jb...->ia...", C.components, G)
    return np.einsum("iajb...,jb...->ia...", C.components, G)


def bilinear(C: Tensor4, u: HomogeneousClass, v: HomogeneousClass) -> float:
    """Energy pairing integral C grad u : grad v over the box."""
    g = u.grid
    if not g.compatible(v.grid) or g.m != v.grid.m:
        raise ValueError("classes live on different grids")
    _check_tensor_grid(C, g)
    Gu = gradient(u.rep)
    Gv = gradient(v.rep)
    return float(np.einsum("ia...,ia...->", _contract(C, Gu), Gv) * g.h**g.d)


def apply_operator(C: Tensor4, u: Field) -> Field:
    """-div(C : grad u), evaluated in mixed form: spectral gradient,
    pointwise contraction, spectral divergence."""
    _check_tensor_grid(C, u.grid)
    S = _contract(C, gradient(u))
    return Field(u.grid, -divergence(u.grid, S))


def manufactured_rhs(C: Tensor4, ustar: HomogeneousClass) -> FunctionalSpec:
    """Density produced by pushing a chosen solution through the operator."""
    return density_functional(apply_operator(C, ustar.rep))


def coercivity_certificate(C: Tensor4) -> tuple[float, str]:
    """Best available coercivity constant and which argument produced it."""
    if C.variant == "constant":
        return lh_constant(C), "constant-legendre-hadamard"
    best = perturbation_coercivity(C.mean(), C)
    source = "perturbation-of-mean"
    if C.m == 1:
        s = scalar_pd_constant(C)
        if s > best:
            best, source = s, "scalar-positive-definite"
    return best, source


def _rhs_grid(rhs: FunctionalSpec) -> Grid:
    return rhs.field.grid.with_m(rhs.m)


def _rhs_density_coeffs(rhs: FunctionalSpec, grid: Grid) -> np.ndarray:
    """Unitary coefficients of the density form of the right-hand side."""
    sp = tuple(range(1, 1 + grid.d))
    scale = grid.N ** (grid.d / 2.0)
    if rhs.kind == "density":
        from .functionals import _require_zero_mean

        _require_zero_mean(rhs.field, "density right-hand side")
        return np.fft.fftn(rhs.field.values, axes=sp) / scale
    F = rhs.field.values.reshape(grid.m, grid.d, *grid.shape)
    Fh = np.fft.fftn(F, axes=tuple(range(2, 2 + grid.d))) / scale
    K = grid.derivative_wavevectors
    return -np.einsum("a...,ma...->m...", 1j * K, Fh)


def _symbol(C: Tensor4, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Acoustic symbol on the derivative wavevectors, flattened to
    (npoints, m, m), plus the flat mask of modes with k != 0."""
    K = grid.derivative_wavevectors
    Gam = np.einsum("iajb,a...,b...->ij...", C.components, K, K)
    flat = np.moveaxis(Gam.reshape(grid.m, grid.m, -1), -1, 0).copy()
    mask = (np.sum(K**2, axis=0) > 0).reshape(-1)
    flat[~mask] = np.eye(grid.m)
    return flat, mask


def solve_constant(C: Tensor4, rhs: FunctionalSpec) -> SolveReport:
    """Exact Fourier-multiplier solve Gamma(k) uhat(k) = fhat(k), uhat(0) = 0."""
    grid = _rhs_grid(rhs)
    if C.variant != "constant":
        raise ValueError("solve_constant requires a constant tensor")
    _check_tensor_grid(C, grid)
    c0 = lh_constant(C)
    if c0 <= 0.0:
        raise EllipticityError(f"tensor fails the Legendre-Hadamard condition (c0 = {c0})")
    fh = _rhs_density_coeffs(rhs, grid)
    symbol, mask = _symbol(C, grid)
    rhsv = np.moveaxis(fh.reshape(grid.m, -1), -1, 0)[..., None]
    try:
        sol = np.linalg.solve(symbol, rhsv)
    except np.linalg.LinAlgError as exc:
        raise EllipticityError(f"singular acoustic symbol away from k = 0: {exc}") from exc
    sol[~mask] = 0.0
    uh = np.moveaxis(sol[..., 0], 0, -1).reshape(grid.m, *grid.shape)
    sp = tuple(range(1, 1 + grid.d))
    vals = np.fft.ifftn(uh, axes=sp).real * grid.N ** (grid.d / 2.0)
    cls = canonicalize(Field(grid, vals))
    # spectral residual over the solved modes
    resv = (symbol @ sol)[..., 0][mask] - np.moveaxis(fh.reshape(grid.m, -1), -1, 0)[mask]
    fnorm = float(np.linalg.norm(fh))
    residual = float(np.linalg.norm(resv)) / fnorm if fnorm > 0 else 0.0
    c1 = tensor_sup_norm(C)
    en = energy(C, rhs, cls)
    constants = {"c0": c0, "c1": c1, "cond_estimate": c1 / c0}
    return SolveReport(cls, residual, 1, en, constants, "fourier")


@dataclass
class _Preconditioner:
    """Exact inverse of the constant-tensor operator, applied spectrally."""

    grid: Grid
    inverse: np.ndarray  # (npoints, m, m) with zeros at excluded modes

    @classmethod
    def build(cls, Cbar: Tensor4, grid: Grid) -> "_Preconditioner":
        symbol, mask = _symbol(Cbar, grid)
        inv = np.linalg.inv(symbol)
        inv[~mask] = 0.0
        return cls(grid, inv)

    def apply(self, values: np.ndarray) -> np.ndarray:
        g = self.grid
        sp = tuple(range(1, 1 + g.d))
        rh = np.fft.fftn(values, axes=sp)
        flat = np.moveaxis(rh.reshape(g.m, -1), -1, 0)[..., None]
        zh = np.moveaxis((self.inverse @ flat)[..., 0], 0, -1).reshape(g.m, *g.shape)
        return np.fft.ifftn(zh, axes=sp).real


def _inner(grid: Grid, a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(a * b) * grid.h**grid.d)


def solve_variable(
    C: Tensor4,
    rhs: FunctionalSpec,
    tol: float = 1e-10,
    maxiter: int | None = None,
    x0: Field | None = None,
) -> SolveReport:
    """Preconditioned CG on the zero-mean subspace for u -> -div C : grad u.

    The preconditioner is the exact inverse for the spatial-average tensor,
    so a constant input converges in one iteration.  Termination is on the
    preconditioned residual norm relative to the right-hand side; iterating
    past the 10 sqrt(kappa) cap raises ConvergenceError.  Tensors without
    the (i,alpha) <-> (j,beta) symmetry are solved through the normal
    equations and flagged in the report.
    """
    grid = _rhs_grid(rhs)
    _check_tensor_grid(C, grid)
    cert, source = coercivity_certificate(C)
    if cert <= 0.0:
        raise EllipticityError(
            f"well-posedness not certified ({source} gave {cert}); refusing to iterate"
        )
    Cbar = C.mean()
    cbar0 = lh_constant(Cbar)
    if cbar0 <= 0.0:
        raise EllipticityError(f"averaged tensor fails Legendre-Hadamard (c0 = {cbar0})")
    dev = cbar0 - perturbation_coercivity(Cbar, C)
    kappa = (cbar0 + dev) / (cbar0 - dev) if dev < cbar0 else math.inf
    cap = maxiter if maxiter is not None else (
        max(20, math.ceil(10.0 * math.sqrt(kappa))) if math.isfinite(kappa) else 1000
    )

    if rhs.kind == "density":
        from .functionals import _require_zero_mean

        _require_zero_mean(rhs.field, "density right-hand side")
        b = rhs.field.values.copy()
    else:
        F = rhs.field.values.reshape(grid.m, grid.d, *grid.shape)
        b = -divergence(grid, F)
    b -= b.mean(axis=tuple(range(1, 1 + grid.d)), keepdims=True)

    symmetric = C.is_major_symmetric()
    if not symmetric:
        return _solve_normal_equations(C, rhs, grid, b, tol, cap, cert, source, kappa)

    prec = _Preconditioner.build(Cbar, grid)

    def A(v: np.ndarray) -> np.ndarray:
        return -divergence(grid, _contract(C, gradient(Field(grid, v))))

    x = np.zeros_like(b) if x0 is None else x0.values.copy()
    x -= x.mean(axis=tuple(range(1, 1 + grid.d)), keepdims=True)

    r = b - A(x)
    z = prec.apply(r)
    rz = _inner(grid, r, z)
    bnorm = math.sqrt(max(_inner(grid, b, prec.apply(b)), 0.0))
    cls0 = canonicalize(Field(grid, x))
    en = energy(C, rhs, cls0)
    energies = [en]
    rel = math.sqrt(max(rz, 0.0)) / bnorm if bnorm > 0 else 0.0
    residuals = [rel]
    iterations = 0
    p = z.copy()
    while rel > tol:
        if iterations >= cap:
            raise ConvergenceError(
                f"no convergence in {cap} iterations (residual {rel:.3e} > tol {tol:.3e})"
            )
        Ap = A(p)
        pAp = _inner(grid, p, Ap)
        if pAp <= 0.0:
            raise EllipticityError("operator lost positivity along a search direction")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = prec.apply(r)
        rz_new = _inner(grid, r, z)
        iterations += 1
        # energy decreases by alpha*rz/2 per step; track it incrementally
        en -= 0.5 * alpha * rz
        energies.append(en)
        rel = math.sqrt(max(rz_new, 0.0)) / bnorm if bnorm > 0 else 0.0
        residuals.append(rel)
        p = z + (rz_new / rz) * p
        rz = rz_new

    cls = canonicalize(Field(grid, x))
    constants = {
        "c0": cert,
        "c1": tensor_sup_norm(C),
        "cond_estimate": kappa,
        "certificate_source": source,
        "mean_tensor_c0": cbar0,
        "deviation": dev,
    }
    return SolveReport(
        cls,
        rel,
        iterations,
        energy(C, rhs, cls),
        constants,
        "pcg",
        tuple(energies),
        tuple(residuals),
    )


def _solve_normal_equations(C, rhs, grid, b, tol, cap, cert, source, kappa) -> SolveReport:
    # CG on A^T M^-1 A u = A^T M^-1 b for tensors without major symmetry.
    Ct = C.transpose_major()
    Cbar_sym = Tensor4(0.5 * (C.mean().components + Ct.mean().components))
    prec = _Preconditioner.build(Cbar_sym, grid)

    def A(v):
        return -divergence(grid, _contract(C, gradient(Field(grid, v))))

    def At(v):
        return -divergence(grid, _contract(Ct, gradient(Field(grid, v))))

    def N(v):
        return At(prec.apply(A(v)))

    rhs_n = At(prec.apply(b))
    x = np.zeros_like(b)
    r = rhs_n - N(x)
    p = r.copy()
    rr = _inner(grid, r, r)
    bnorm = math.sqrt(max(_inner(grid, rhs_n, rhs_n), 0.0))
    rel = math.sqrt(max(rr, 0.0)) / bnorm if bnorm > 0 else 0.0
    residuals = [rel]
    iterations = 0
    while rel > tol:
        if iterations >= cap * 10:
            raise ConvergenceError(f"normal-equation CG stalled at residual {rel:.3e}")
        Np = N(p)
        alpha = rr / _inner(grid, p, Np)
        x += alpha * p
        r -= alpha * Np
        rr_new = _inner(grid, r, r)
        iterations += 1
        rel = math.sqrt(max(rr_new, 0.0)) / bnorm if bnorm > 0 else 0.0
        residuals.append(rel)
        p = r + (rr_new / rr) * p
        rr = rr_new
    cls = canonicalize(Field(grid, x))
    constants = {
        "c0": cert,
        "c1": tensor_sup_norm(C),
        "cond_estimate": kappa,
        "certificate_source": source,
    }
    return SolveReport(
        cls,
        rel,
        iterations,
        energy(C, rhs, cls),
        constants,
        "normal-cg",
        (),
        tuple(residuals),
    )


def energy(C: Tensor4, rhs: FunctionalSpec, u: HomogeneousClass) -> float:
    """Quadratic energy (1/2) a(u, u) - l(u); the solution minimizes it."""
    return 0.5 * bilinear(C, u, u) - apply_functional(rhs, u)


@dataclass(frozen=True)
class RegularityReport:
    h2_bound_ok: bool
    h3_bound_ok: bool
    measured_norms: dict = dc_field(default_factory=dict)


def _spectral_tail_fraction(C: Tensor4, grid: Grid) -> float:
    comps = C.components.reshape(-1, *grid.shape)
    co = np.fft.fftn(comps, axes=tuple(range(1, 1 + grid.d)))
    idx = np.abs(np.fft.fftfreq(grid.N) * grid.N)
    mesh = np.stack(np.meshgrid(*(idx,) * grid.d, indexing="ij"))
    tail = np.any(mesh > grid.N // 4, axis=0)
    total = float(np.sum(np.abs(co) ** 2))
    if total == 0.0:
        return 0.0
    return float(np.sum(np.abs(co[:, tail]) ** 2) / total)


def _tensor_derivative_norms(C: Tensor4, grid: Grid) -> tuple[float, float, float]:
    """(sup-norm of grad C, L^2 norm of grad C, sup-norm of grad^2 C)."""
    if C.variant == "constant":
        return 0.0, 0.0, 0.0
    m, d = C.m, C.d
    sp = tuple(range(1, 1 + d))
    comps = C.components.reshape(m * d * m * d, *grid.shape)
    co = np.fft.fftn(comps, axes=sp)
    K = grid.derivative_wavevectors

    def opnorm_max(mats_flat: np.ndarray) -> float:
        mats = np.moveaxis(mats_flat.reshape(m, d, m, d, -1), -1, 0).reshape(-1, m * d, m * d)
        return float(np.linalg.svd(mats, compute_uv=False)[:, 0].max())

    sup1 = 0.0
    l2sq = 0.0
    sup2 = 0.0
    for gamma in range(d):
        dg = np.fft.ifftn(1j * K[gamma] * co, axes=sp).real
        sup1 = max(sup1, opnorm_max(dg))
        l2sq += float(np.sum(dg**2) * grid.h**grid.d)
        for delta in range(gamma, d):
            dgd = np.fft.ifftn(-K[gamma] * K[delta] * co, axes=sp).real
            sup2 = max(sup2, opnorm_max(dgd))
    return sup1, math.sqrt(l2sq), sup2


def regularity_check(C: Tensor4, f: Field, u: HomogeneousClass, slack: float = 1e-9) -> RegularityReport:
    """Check the a-priori derivative bounds satisfied by a solved class.

    Second order, per direction gamma:
        c0 ||grad d_gamma u|| <= ||f|| + ||grad C||_inf ||grad u||.
    Third order, per direction pair, with the measured ||grad u|| standing
    in for the undetermined constant multiplying ||grad^2 C||_inf:
        c0 ||grad d_gamma d_delta u||
            <= ||grad f|| + ||grad C||_2 ||grad^2 u|| + ||grad^2 C||_inf ||grad u||.
    All raw terms are returned so other readings can be rechecked.
    """
    grid = u.grid
    _check_tensor_grid(C, grid)
    if C.variant == "varying":
        tail = _spectral_tail_fraction(C, grid)
        if tail > 1e-8:
            raise ValueError(
                f"coefficient tensor is not spectrally resolved (tail fraction {tail:.3e})"
            )
    sp = tuple(range(1, 1 + grid.d))
    scale = grid.N ** (grid.d / 2.0)
    uh = np.fft.fftn(u.rep.values, axes=sp) / scale
    K = grid.derivative_wavevectors
    k2 = np.sum(K**2, axis=0)
    pw = np.einsum("i...,i...->...", np.abs(uh), np.abs(uh))
    hd = grid.h**grid.d

    norm_du = math.sqrt(float(np.sum(k2 * pw)) * hd)
    norm_d2u = math.sqrt(float(np.sum(k2**2 * pw)) * hd)
    norm_d3u = math.sqrt(float(np.sum(k2**3 * pw)) * hd)
    fh = np.fft.fftn(f.values, axes=sp) / scale
    fw = np.einsum("i...,i...->...", np.abs(fh), np.abs(fh))
    norm_f = lp_norm(f, 2.0)
    norm_df = math.sqrt(float(np.sum(k2 * fw)) * hd)

    c0, source = coercivity_certificate(C)
    if c0 <= 0.0:
        raise EllipticityError(f"no positive coercivity certificate ({source}: {c0})")
    dC_inf, dC_l2, d2C_inf = _tensor_derivative_norms(C, grid)

    rhs2 = norm_f + dC_inf * norm_du
    margins2 = []
    for gamma in range(grid.d):
        lhs = c0 * math.sqrt(float(np.sum(K[gamma] ** 2 * k2 * pw)) * hd)
        margins2.append(rhs2 - lhs)
    h2_ok = all(mg >= -slack * max(1.0, rhs2) for mg in margins2)

    rhs3 = norm_df + dC_l2 * norm_d2u + d2C_inf * norm_du
    margins3 = []
    for gamma in range(grid.d):
        for delta in range(grid.d):
            lhs = c0 * math.sqrt(
                float(np.sum(K[gamma] ** 2 * K[delta] ** 2 * k2 * pw)) * hd
            )
            margins3.append(rhs3 - lhs)
    h3_ok = all(mg >= -slack * max(1.0, rhs3) for mg in margins3)

    measured = {
        "c0": c0,
        "certificate_source": source,
        "norm_grad_u": norm_du,
        "norm_grad2_u": norm_d2u,
        "norm_grad3_u": norm_d3u,
        "norm_f": norm_f,
        "norm_grad_f": norm_df,
        "grad_C_inf": dC_inf,
        "grad_C_l2": dC_l2,
        "grad2_C_inf": d2C_inf,
        "h2_min_margin": min(margins2),
        "h3_min_margin": min(margins3),
    }
    return RegularityReport(h2_ok, h3_ok, measured)
