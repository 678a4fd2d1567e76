"""Pseudospectral toolkit for whole-space elliptic systems posed in
homogeneous Sobolev (Beppo Levi) classes on a truncated periodic box."""

__version__ = "0.1.0"

from .ellipticity import (
    AcousticTensor,
    EllipticityError,
    Tensor4,
    acoustic_tensor,
    isotropic_tensor,
    laplacian_tensor,
    lh_constant,
    perturbation_coercivity,
    perturbed_laplacian_tensor,
    scalar_pd_constant,
    tensor_sup_norm,
)
from .functionals import (
    AdmissibilityError,
    AdmissibilityReport,
    FunctionalSpec,
    admissibility_report,
    density_functional,
    flux_functional,
    riesz_flux,
)
from .grid import (
    Field,
    Grid,
    SpectralField,
    convolve,
    forward_transform,
    gradient,
    inverse_transform,
    lp_norm,
    read_field,
    spectral_derivative,
    write_field,
)
from .growth import (
    CubeChain,
    GrowthEnvelope,
    build_cube_chain,
    chain_oscillation,
    check_envelope,
    farfield_ratio,
    fit_growth_exponent,
    radial_sup_profile,
)
from .quotient import (
    Decomposition,
    HomogeneousClass,
    Mollifier,
    canonicalize,
    d1_counterexample,
    decompose,
    density_sequence,
    deny_lions_example,
    mollifier,
    seminorm,
    w11_mean_invariant,
)
from .solver import (
    ConvergenceError,
    RegularityReport,
    SolveReport,
    WeakProblem,
    bilinear,
    energy,
    manufactured_rhs,
    regularity_check,
    solve_constant,
    solve_variable,
)

__all__ = [name for name in dir() if not name.startswith("_")]
