"""Numerical laboratory for boundary-degenerate parabolic equations."""

from .geometry import BoundaryPart, Box, DomainSpec, TruncatedDomain, collar, make_domain, truncate
from .discretize import (
    Mesh,
    OperatorPair,
    assemble,
    boundary_flux,
    build_mesh,
    edge_mass,
    hardy_check,
    mass_1d,
    norms,
    poincare_check,
    restrict_mesh,
    stiffness_1d,
)
from .spectral import Spectrum, compute_spectrum, expand, rayleigh, reconstruct
from .evolution import (
    SpaceTimeField,
    TimeGrid,
    energy_history,
    flux_history,
    solve_implicit,
    solve_spectral,
    stability_ratio,
    time_reverse,
)
from .shape_design import (
    ConvergenceReport,
    delta_sweep,
    extend_by_zero,
    extend_vector,
    isometry_report,
    solve_truncated,
    stability_sweep,
)
from .carleman import (
    CarlemanBudget,
    CarlemanWeights,
    S0Fit,
    check_inequality,
    eval_weights,
    find_s0,
    p_residual,
    transform,
)
from .observability import (
    ObservabilityReport,
    clustered_times,
    estimate_constant,
    observability_ratio,
    window_bound_check,
)
from .rng import Lcg, random_admissible

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
