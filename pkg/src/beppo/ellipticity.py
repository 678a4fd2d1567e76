"""Coefficient tensors and their ellipticity analysis.

A rank-4 tensor C with indices (i, alpha, j, beta) acts on gradients by
contraction, (C : G)_{i alpha} = C_{i alpha j beta} G_{j beta}.  The
Legendre-Hadamard constant is the minimum over unit wavevectors k of the
smallest eigenvalue of the symmetrized acoustic tensor
Gamma(k)_{ij} = C_{i alpha j beta} k_alpha k_beta.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .grid import FIELD_MAGIC, Grid

__all__ = [
    "EllipticityError",
    "Tensor4",
    "AcousticTensor",
    "acoustic_tensor",
    "lh_constant",
    "scalar_pd_constant",
    "perturbation_coercivity",
    "tensor_sup_norm",
    "laplacian_tensor",
    "isotropic_tensor",
    "perturbed_laplacian_tensor",
    "write_tensor",
    "read_tensor",
]


class EllipticityError(RuntimeError):
    """A required ellipticity or coercivity certificate failed."""


@dataclass(frozen=True)
class Tensor4:
    """Coefficient tensor, constant (m,d,m,d) or varying (m,d,m,d,N,...,N)."""

    components: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.components, dtype=np.float64)
        if c.ndim < 4:
            raise ValueError(f"tensor needs at least 4 indices, got shape {c.shape}")
        if c.shape[0] != c.shape[2] or c.shape[1] != c.shape[3]:
            raise ValueError(f"tensor index shape {c.shape[:4]} is not (m,d,m,d)")
        extra = c.ndim - 4
        if extra not in (0, c.shape[1]):
            raise ValueError(
                f"varying tensor must carry {c.shape[1]} spatial axes, got {extra}"
            )
        if not np.all(np.isfinite(c)):
            raise ValueError("tensor contains non-finite components")
        object.__setattr__(self, "components", c)

    @property
    def m(self) -> int:
        return self.components.shape[0]

    @property
    def d(self) -> int:
        return self.components.shape[1]

    @property
    def variant(self) -> str:
        return "constant" if self.components.ndim == 4 else "varying"

    def mean(self) -> "Tensor4":
        """Spatial average; the identity for constant tensors."""
        if self.variant == "constant":
            return self
        axes = tuple(range(4, self.components.ndim))
        return Tensor4(self.components.mean(axis=axes))

    def transpose_major(self) -> "Tensor4":
        """Swap the (i, alpha) and (j, beta) index pairs."""
        order = (2, 3, 0, 1) + tuple(range(4, self.components.ndim))
        return Tensor4(self.components.transpose(order))

    def is_major_symmetric(self, rtol: float = 1e-12) -> bool:
        other = self.transpose_major().components
        scale = float(np.max(np.abs(self.components))) or 1.0
        return bool(np.max(np.abs(self.components - other)) <= rtol * scale)


@dataclass(frozen=True)
class AcousticTensor:
    """m x m symbol Gamma(k); quadratic in k."""

    entries: np.ndarray
    wavevector: np.ndarray


def acoustic_tensor(C: Tensor4, k) -> AcousticTensor:
    if C.variant != "constant":
        raise ValueError("acoustic tensor is defined for constant tensors")
    k = np.asarray(k, dtype=float)
    if k.shape != (C.d,):
        raise ValueError(f"wavevector must have {C.d} components, got shape {k.shape}")
    entries = np.einsum("iajb,a,b->ij", C.components, k, k)
    return AcousticTensor(entries, k)


def _sphere_lattice(d: int, n: int) -> np.ndarray:
    if d == 1:
        return np.array([[1.0]])
    if d == 2:
        th = 2.0 * np.pi * np.arange(n) / n
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    if d == 3:
        # Fibonacci sphere
        i = np.arange(n) + 0.5
        z = 1.0 - 2.0 * i / n
        phi = np.pi * (1.0 + np.sqrt(5.0)) * i
        rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    rng = np.random.default_rng(1234 + n)  # deterministic per lattice size
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _lattice_min(C: Tensor4, pts: np.ndarray) -> tuple[float, np.ndarray]:
    G = np.einsum("iajb,na,nb->nij", C.components, pts, pts)
    S = 0.5 * (G + np.swapaxes(G, 1, 2))
    vals = np.linalg.eigvalsh(S)[:, 0]
    i0 = int(np.argmin(vals))
    return float(vals[i0]), pts[i0]


def _min_eig_unit(C: Tensor4, z: np.ndarray) -> float:
    nz = float(np.linalg.norm(z))
    if nz == 0.0:
        return np.inf
    k = z / nz
    G = np.einsum("iajb,a,b->ij", C.components, k, k)
    return float(np.linalg.eigvalsh(0.5 * (G + G.T))[0])


def lh_constant(C: Tensor4, refinement: int = 64) -> float:
    """Legendre-Hadamard constant: min over the unit sphere of the smallest
    eigenvalue of the symmetrized acoustic tensor.

    The sphere lattice doubles (with a local Nelder-Mead polish around the
    best sample) until the minimum is stable to a relative 1e-6.  A value
    <= 0 signals failure of the Legendre-Hadamard condition.
    """
    if C.variant != "constant":
        raise ValueError("Legendre-Hadamard constant requires a constant tensor")
    if C.d == 1:
        return _min_eig_unit(C, np.array([1.0]))
    n = max(int(refinement), 8)
    prev = None
    cur = np.inf
    for _ in range(16):
        best, kbest = _lattice_min(C, _sphere_lattice(C.d, n))
        fscale = max(1.0, abs(best))
        res = minimize(
            lambda z: _min_eig_unit(C, z),
            kbest,
            method="Nelder-Mead",
            options={"xatol": 1e-9, "fatol": 1e-12 * fscale, "maxiter": 400},
        )
        cur = min(best, float(res.fun))
        if prev is not None and abs(cur - prev) < 1e-6 * max(1.0, abs(cur)):
            return min(cur, prev)
        prev = cur
        n *= 2
    return cur


def scalar_pd_constant(C: Tensor4) -> float:
    """Smallest eigenvalue of the symmetric part of the d x d matrix of a
    scalar problem, minimized over grid points; positive certifies coercivity."""
    if C.m != 1:
        raise ValueError(f"scalar positive-definiteness requires m = 1, got m = {C.m}")
    mats = C.components[0, :, 0, :]
    if C.variant == "varying":
        mats = np.moveaxis(mats.reshape(C.d, C.d, -1), -1, 0)
    else:
        mats = mats[None]
    sym = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    return float(np.linalg.eigvalsh(sym)[..., 0].min())


def tensor_sup_norm(C: Tensor4) -> float:
    """Sup over points of the operator norm of the contraction G -> C : G.

    The pointwise norm is the largest singular value of the (m d) x (m d)
    matrix with row index (i, alpha) and column index (j, beta).
    """
    m, d = C.m, C.d
    if C.variant == "constant":
        mats = C.components.reshape(1, m * d, m * d)
    else:
        flat = C.components.reshape(m, d, m, d, -1)
        mats = np.moveaxis(flat, -1, 0).reshape(-1, m * d, m * d)
    s = np.linalg.svd(mats, compute_uv=False)
    return float(s[:, 0].max())


def perturbation_coercivity(Cbar: Tensor4, C: Tensor4) -> float:
    """Coercivity certificate for C as a perturbation of a constant tensor:
    lh_constant(Cbar) minus the sup-norm of the deviation.  A nonpositive
    return is inconclusive rather than a disproof."""
    if Cbar.variant != "constant":
        raise ValueError("reference tensor must be constant")
    if (Cbar.m, Cbar.d) != (C.m, C.d):
        raise ValueError("tensor index shapes differ")
    cbar0 = lh_constant(Cbar)
    if cbar0 <= 0.0:
        raise EllipticityError(
            f"reference tensor fails the Legendre-Hadamard condition (c0 = {cbar0})"
        )
    ref = Cbar.components
    if C.variant == "varying":
        ref = ref.reshape(ref.shape + (1,) * (C.components.ndim - 4))
    dev = tensor_sup_norm(Tensor4(C.components - ref))
    return float(cbar0 - dev)


def laplacian_tensor(d: int, m: int = 1) -> Tensor4:
    """Identity contraction C_{iajb} = delta_ij delta_ab (component Laplacian)."""
    return Tensor4(np.einsum("ij,ab->iajb", np.eye(m), np.eye(d)))


def isotropic_tensor(lam: float, mu: float, d: int) -> Tensor4:
    """Isotropic elasticity with Lame parameters, m = d."""
    eye = np.eye(d)
    comps = (
        lam * np.einsum("ia,jb->iajb", eye, eye)
        + mu * np.einsum("ij,ab->iajb", eye, eye)
        + mu * np.einsum("ib,ja->iajb", eye, eye)
    )
    return Tensor4(comps)


def perturbed_laplacian_tensor(grid: Grid, amplitude: float) -> Tensor4:
    """(1 + amplitude * sin(pi x_1 / L)) times the component Laplacian."""
    base = laplacian_tensor(grid.d, grid.m).components
    factor = 1.0 + amplitude * np.sin(np.pi * grid.coords[0] / grid.L)
    comps = base.reshape(base.shape + (1,) * grid.d) * factor
    return Tensor4(comps)


_TENSOR_HEADER_FMT = "<7sBIIId"


def write_tensor(T: Tensor4, grid: Grid, path) -> None:
    """Field-format binary with a variant flag byte after the magic."""
    flag = 0 if T.variant == "constant" else 1
    if T.variant == "varying" and T.components.shape[4:] != grid.shape:
        raise ValueError("varying tensor sampled on a different grid")
    if (T.m, T.d) != (grid.m, grid.d):
        raise ValueError("tensor index shape does not match the grid")
    header = struct.pack(_TENSOR_HEADER_FMT, FIELD_MAGIC, flag, grid.d, grid.m, grid.N, grid.L)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(T.components, dtype="<f8").tobytes())


def read_tensor(path) -> tuple[Tensor4, Grid]:
    with open(path, "rb") as fh:
        data = fh.read()
    hsize = struct.calcsize(_TENSOR_HEADER_FMT)
    if len(data) < hsize:
        raise ValueError(f"{path}: truncated tensor file")
    magic, flag, d, m, n, box = struct.unpack_from(_TENSOR_HEADER_FMT, data, 0)
    if magic != FIELD_MAGIC:
        raise ValueError(f"{path}: bad magic, not a tensor file")
    if flag not in (0, 1):
        raise ValueError(f"{path}: unknown variant flag {flag}")
    grid = Grid(d, m, box, n)
    count = m * d * m * d * (1 if flag == 0 else n**d)
    if len(data) != hsize + 8 * count:
        raise ValueError(f"{path}: expected {count} components, file size mismatch")
    comps = np.frombuffer(data, dtype="<f8", count=count, offset=hsize)
    shape = (m, d, m, d) if flag == 0 else (m, d, m, d, *grid.shape)
    return Tensor4(comps.reshape(shape).copy()), grid
