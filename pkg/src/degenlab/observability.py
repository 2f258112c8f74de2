"""Boundary observability ratios and worst-case constant estimates.

For source-free evolutions the initial energy is controlled by the
squared normal derivative integrated over the observed boundary and the
time horizon.  The laboratory measures the ratio for individual data and
estimates the worst constant over finite eigenmode subspaces through the
flux Gram matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .discretize import OperatorPair, boundary_flux, edge_mass
from .errors import ConventionError, DegenerateObservationError, ParameterError
from .evolution import SpaceTimeField, TimeGrid, energy_history
from .geometry import BoundaryPart
from .spectral import Spectrum, expand

_MODE_DEPTH_LIMIT = 60.0  # largest admissible lambda_K * T


def clustered_times(T: float, steps: int, lam_max: float, ratio: float = 1.2):
    """Time nodes refined near t = 0 by geometric growth of the step.

    Mode fluxes decay like exp(-lambda t), so quadrature needs early-time
    resolution; the first increment resolves the fastest mode and grows
    by the given ratio until it reaches the uniform step T/steps.
    """
    cap = T / steps
    dt = min(cap, 0.1 / max(lam_max, 1.0))
    nodes = [0.0]
    t = 0.0
    while t < T:
        t = min(t + dt, T)
        nodes.append(t)
        dt = min(dt * ratio, cap)
    return np.array(nodes)


def mode_flux_matrix(ops: OperatorPair, spectrum: Spectrum, part=BoundaryPart.OBSERVED):
    """Boundary flux of every eigenvector, one column per mode."""
    cols = [boundary_flux(ops, ops.mesh, spectrum.modes[:, k], part,
                          f_proxy=spectrum.eigenvalues[k] * spectrum.modes[:, k])
            for k in range(spectrum.count)]
    return np.stack(cols, axis=1)


def _flux_gram(ops: OperatorPair, spectrum: Spectrum, grid: TimeGrid, k: int):
    lam = spectrum.eigenvalues[:k]
    fm = mode_flux_matrix(ops, spectrum)[:, :k]
    emat = edge_mass(ops.mesh, BoundaryPart.OBSERVED)
    spatial = fm.T @ (emat @ fm)
    tq = clustered_times(grid.T, grid.steps, float(lam[-1]))
    decay = np.exp(-np.add.outer(lam, lam)[None, :, :] * tq[:, None, None])
    time_factors = np.trapezoid(decay, tq, axis=0)
    return spatial * time_factors


def observability_ratio(y0, grid: TimeGrid, ops: OperatorPair,
                        spectrum: Spectrum) -> float:
    """||y0||^2 divided by the flux integral of the source-free evolution.

    The evolution is spectral over the computed modes; the flux history
    is integrated on the clustered time grid.  Scale-invariant in y0.
    """
    y0 = np.asarray(y0, dtype=float)
    nsq = float(y0 @ (ops.M_full @ y0))
    if nsq == 0.0:
        raise ParameterError("observability ratio undefined for y0 = 0")
    coeffs = expand(spectrum, y0)
    gram = _flux_gram(ops, spectrum, grid, spectrum.count)
    flux_int = float(coeffs @ (gram @ coeffs))
    if flux_int < 1e-300:
        raise DegenerateObservationError(
            "observed flux integral vanishes; datum is unobservable at this depth"
        )
    return nsq / flux_int


@dataclass(frozen=True)
class ObservabilityReport:
    """Constant estimate over an eigenmode subspace.

    subspace_dim is the effective K after enforcing lambda_K * T <= 60
    (deeper modes contribute numerically unobservable fluxes that would
    poison the Gram conditioning).
    """

    alpha: float
    T: float
    delta: float
    n_cells: int
    steps: int
    requested_modes: int
    subspace_dim: int
    ratios: tuple
    c_obs: float | None
    singular: bool
    null_direction: tuple | None


def estimate_constant(grid: TimeGrid, ops: OperatorPair, spectrum: Spectrum,
                      k_modes: int) -> ObservabilityReport:
    """Worst energy/flux ratio over the first k eigenmodes.

    The supremum over the subspace equals the largest generalized
    eigenvalue of the identity against the flux Gram matrix, i.e. the
    reciprocal of the Gram's smallest eigenvalue.
    """
    if k_modes < 1 or k_modes > spectrum.count:
        raise ParameterError(f"k_modes={k_modes} outside [1, {spectrum.count}]")
    lam = spectrum.eigenvalues
    if lam[0] * grid.T > _MODE_DEPTH_LIMIT:
        raise ParameterError(
            f"lambda_1 * T = {lam[0] * grid.T:.3g} exceeds the depth limit "
            f"{_MODE_DEPTH_LIMIT}; shorten the horizon"
        )
    k_eff = int(np.searchsorted(lam * grid.T, _MODE_DEPTH_LIMIT, side="right"))
    k_eff = min(k_eff, k_modes)
    gram = _flux_gram(ops, spectrum, grid, k_eff)
    ratios = tuple(1.0 / gram[m, m] for m in range(k_eff))
    evals, evecs = la.eigh(gram)
    mesh = ops.mesh
    delta = float(mesh.domain.xn_lower)
    n_cells = mesh.shape[-1] - 1
    # the Gram of an SPD observation problem stays positive until its true
    # smallest eigenvalue sinks below roundoff, so non-positivity is the
    # meaningful singularity test
    if evals[0] <= 1e-300:
        return ObservabilityReport(
            alpha=ops.alpha, T=grid.T, delta=delta, n_cells=n_cells,
            steps=grid.steps, requested_modes=k_modes, subspace_dim=k_eff,
            ratios=ratios, c_obs=None, singular=True,
            null_direction=tuple(evecs[:, 0]),
        )
    return ObservabilityReport(
        alpha=ops.alpha, T=grid.T, delta=delta, n_cells=n_cells,
        steps=grid.steps, requested_modes=k_modes, subspace_dim=k_eff,
        ratios=ratios, c_obs=float(1.0 / evals[0]), singular=False,
        null_direction=None,
    )


def window_bound_check(field: SpaceTimeField, ops: OperatorPair):
    """Initial energy against the mean energy over the middle half window.

    The field must follow the backward convention, i.e. its L2 energy is
    non-decreasing in time; then
    ||y(0)||^2 <= (2/T) * integral over (T/4, 3T/4) of ||y(t)||^2 dt.
    """
    t = field.grid.nodes
    esq = energy_history(field, ops) ** 2
    scale = max(float(esq.max()), 1e-300)
    if np.any(np.diff(esq) < -1e-10 * scale):
        raise ConventionError(
            "energy decreases in time; window bound needs a backward-convention field"
        )
    T = field.grid.T
    lo, hi = T / 4.0, 3.0 * T / 4.0
    inside = (t > lo) & (t < hi)
    tq = np.concatenate([[lo], t[inside], [hi]])
    eq = np.concatenate([[np.interp(lo, t, esq)], esq[inside], [np.interp(hi, t, esq)]])
    rhs = (2.0 / T) * float(np.trapezoid(eq, tq))
    lhs = float(esq[0])
    return {"lhs": lhs, "rhs": rhs, "holds": lhs <= rhs * (1.0 + 1e-8)}
