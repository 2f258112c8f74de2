"""Forward-in-time evolution of the weighted parabolic equation.

Two solvers share one convention (forward from an initial datum): the
spectral Galerkin solver evolves each mode coefficient by the explicit
exponential formula, and a theta scheme provides an independent
cross-validation path.  Backward problems are handled by reversing time
with :func:`time_reverse` rather than by a second solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .discretize import OperatorPair, boundary_flux, edge_mass
from .errors import ContractError, ParameterError
from .spectral import Spectrum, expand


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time nodes on [0, T]."""

    T: float
    steps: int

    def __post_init__(self):
        if self.T <= 0.0:
            raise ParameterError(f"final time must be positive, got {self.T}")
        if self.steps < 8:
            raise ParameterError(f"need at least 8 time steps, got {self.steps}")

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def nodes(self):
        return np.linspace(0.0, self.T, self.steps + 1)


class SpaceTimeField:
    """Nodal values y(x, t_j) for every time node, zero on the boundary."""

    def __init__(self, mesh, grid, values, source=None, direction="forward",
                 mode_data=None):
        self.mesh = mesh
        self.grid = grid
        self.values = values
        self.source = source
        self.direction = direction
        self._mode_data = mode_data
        if values.shape != (grid.steps + 1, mesh.n_nodes):
            raise ContractError("field shape does not match grid and mesh")

    @property
    def y0(self):
        return self.values[0]

    def source_values(self):
        """Source as a (steps+1, n_nodes) array (zeros when absent)."""
        m, n = self.grid.steps + 1, self.mesh.n_nodes
        if self.source is None:
            return np.zeros((m, n))
        f = np.asarray(self.source, dtype=float)
        if f.shape == (n,):
            return np.broadcast_to(f, (m, n))
        if f.shape == (m, n):
            return f
        raise ContractError("source must be nodal, constant or per time node")


def _phi1(mu):
    """(1 - exp(-mu)) / mu, stable for small mu."""
    mu = np.asarray(mu, dtype=float)
    return np.where(mu < 1e-12, 1.0 - mu / 2.0, -np.expm1(-mu) / np.where(mu == 0, 1, mu))


def _phi2(mu):
    """(1 - (1 + mu) exp(-mu)) / mu**2, stable for small mu."""
    mu = np.asarray(mu, dtype=float)
    small = mu < 1e-3
    safe = np.where(small, 1.0, mu)
    exact = (-np.expm1(-safe) - safe * np.exp(-safe)) / safe**2
    series = 0.5 - mu / 6.0 + mu**2 / 24.0 - mu**3 / 120.0
    return np.where(small, series, exact)


def _mode_loads(spectrum: Spectrum, f, grid):
    m = grid.steps + 1
    k = spectrum.count
    if f is None:
        return np.zeros((m, k))
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        return np.broadcast_to(expand(spectrum, f), (m, k)).copy()
    if f.shape[0] != m:
        raise ContractError("per-time source must have steps+1 rows")
    return np.array([expand(spectrum, f[j]) for j in range(m)])


def solve_spectral(spectrum: Spectrum, y0, f, grid: TimeGrid) -> SpaceTimeField:
    """Evolve by the explicit per-mode formula.

    Each coefficient obeys c' + lambda c = f_n(t) and is advanced exactly
    for the piecewise-linear-in-time interpolant of the mode load, so
    there is no stiffness restriction on the step size.  The field is the
    evolution of the projection of (y0, f) onto the computed mode span;
    data outside the span is discarded (callers supply expandable data).
    """
    lam = spectrum.eigenvalues
    mu = lam * grid.dt
    decay = np.exp(-mu)
    w_new = grid.dt * (_phi1(mu) - _phi2(mu))
    w_old = grid.dt * _phi2(mu)
    loads = _mode_loads(spectrum, f, grid)
    m = grid.steps + 1
    coeffs = np.empty((m, spectrum.count))
    coeffs[0] = expand(spectrum, np.asarray(y0, dtype=float))
    for j in range(grid.steps):
        coeffs[j + 1] = coeffs[j] * decay + loads[j] * w_old + loads[j + 1] * w_new
    values = coeffs @ spectrum.modes.T
    return SpaceTimeField(spectrum.ops.mesh, grid, values, source=f,
                          mode_data=(spectrum, coeffs, loads))


def solve_implicit(ops: OperatorPair, y0, f, grid: TimeGrid,
                   theta: float = 1.0) -> SpaceTimeField:
    """Theta scheme (M + theta dt K) y+ = (M - (1-theta) dt K) y + dt M f.

    Unconditionally stable for theta in [0.5, 1]; theta = 1 is backward
    Euler, theta = 0.5 the second-order midpoint rule.
    """
    if not (0.5 <= theta <= 1.0):
        raise ParameterError(f"theta must lie in [0.5, 1], got {theta}")
    mesh = ops.mesh
    y0 = np.asarray(y0, dtype=float)
    dt = grid.dt
    lhs = (ops.M + theta * dt * ops.K).tocsc()
    rhs_op = (ops.M - (1.0 - theta) * dt * ops.K).tocsr()
    lu = spla.splu(lhs)
    m = grid.steps + 1
    values = np.zeros((m, mesh.n_nodes))
    values[0] = y0
    field = SpaceTimeField(mesh, grid, values, source=f)
    fvals = field.source_values()
    ii = ops.interior
    y = y0[ii].copy()
    for j in range(grid.steps):
        fmid = (1.0 - theta) * fvals[j, ii] + theta * fvals[j + 1, ii]
        y = lu.solve(rhs_op @ y + dt * (ops.M @ fmid))
        values[j + 1, ii] = y
    return field


def energy_history(field: SpaceTimeField, ops: OperatorPair):
    """L2 norm of the field at every time node; non-increasing when the
    source vanishes (parabolic energy decay)."""
    v = field.values
    sq = np.einsum("tn,tn->t", v, (ops.M_full @ v.T).T)
    return np.sqrt(np.maximum(sq, 0.0))


def _time_derivative(values, dt):
    dv = np.empty_like(values)
    dv[1:-1] = (values[2:] - values[:-2]) / (2.0 * dt)
    dv[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dt)
    dv[-1] = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * dt)
    return dv


def flux_history(field: SpaceTimeField, ops: OperatorPair, part):
    """Normal derivative on a boundary part at every time node, plus the
    space-time integral of its square over part x (0, T).

    Fields produced by the spectral solver reuse the exact per-mode
    fluxes; other fields fall back to variational recovery with a
    finite-differenced time derivative as the load proxy.
    """
    mesh = field.mesh
    grid = field.grid
    if field._mode_data is not None:
        spectrum, coeffs, _ = field._mode_data
        cols = [boundary_flux(ops, mesh, spectrum.modes[:, k], part,
                              f_proxy=spectrum.eigenvalues[k] * spectrum.modes[:, k])
                for k in range(spectrum.count)]
        mode_flux = np.stack(cols, axis=1)  # (n_part, k)
        flux = coeffs @ mode_flux.T
    else:
        fvals = field.source_values()
        dydt = _time_derivative(field.values, grid.dt)
        rows = []
        for j in range(grid.steps + 1):
            rows.append(boundary_flux(ops, mesh, field.values[j], part,
                                      f_proxy=fvals[j] - dydt[j]))
        flux = np.stack(rows, axis=0)
    emat = edge_mass(mesh, part)
    per_time = np.einsum("tb,tb->t", flux, (emat @ flux.T).T)
    integral = float(np.trapezoid(per_time, grid.nodes))
    return flux, integral


def time_reverse(field: SpaceTimeField) -> SpaceTimeField:
    """Backward-convention view: t -> T - t.

    If y solves the forward equation with source g, the reversed field
    solves the backward equation (d_t + div(A grad)) y = -g(T - t); its
    L2 energy is non-decreasing when g = 0.
    """
    fvals = field.source_values()
    return SpaceTimeField(field.mesh, field.grid, field.values[::-1].copy(),
                          source=-fvals[::-1].copy(), direction="backward")


def stability_ratio(field: SpaceTimeField, ops: OperatorPair) -> float:
    """Measured shape of the a-priori energy estimate:

        [ sup_t ||y(t)||_L2 + ||y||_{L2(0,T;H1w)} ] / [ ||f||_{L2(Q)} + ||y0||_L2 ].
    """
    t = field.grid.nodes
    v = field.values
    l2 = energy_history(field, ops)
    h1sq = np.einsum("tn,tn->t", v, (ops.K_full @ v.T).T)
    h1_qt = np.sqrt(max(np.trapezoid(h1sq, t), 0.0))
    fvals = field.source_values()
    fsq = np.einsum("tn,tn->t", fvals, (ops.M_full @ fvals.T).T)
    f_qt = np.sqrt(max(np.trapezoid(fsq, t), 0.0))
    denom = f_qt + l2[0]
    if denom == 0.0:
        raise ParameterError("stability ratio undefined for zero data")
    return (float(np.max(l2)) + h1_qt) / denom
