"""Carleman weight system and empirical inequality budgets.

The weight family is

    eta(x)   = x_N**(2 - alpha),
    Theta(t) = 1 / [t (T - t)]**4,
    xi(t, x) = Theta(t) (gamma - eta(x)),   gamma = sup eta + 1,

and the transformed variable z = exp(-s xi) y vanishes (with its
gradient) at t = 0 and t = T.  The inequality budgets compare

    s  II Theta x_N**alpha (d_N z)**2  +  s**3 II Theta**3 z**2 x_N**(2-alpha)

against the weighted source norm plus a constant times the observed
boundary term.  Every budget integral is accumulated in log space
(log-sum-exp over quadrature samples): for moderate s the factor
exp(-2 s xi) already underflows double precision, while ratios of the
integrals stay perfectly representable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .discretize import OperatorPair, edge_mass, part_node_ids
from .errors import ContractError, ParameterError
from .evolution import SpaceTimeField, flux_history
from .geometry import BoundaryPart, TruncatedDomain


@dataclass(frozen=True)
class CarlemanWeights:
    """Weight family for a fixed exponent, horizon and parameter s.

    gamma = sup_Omega x_N**(2-alpha) + 1 = 2 on the unit geometries, so
    gamma - eta >= 1 and xi > 0 on (0, T) x Omega.
    """

    alpha: float
    T: float
    s: float
    gamma: float = 2.0

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.T <= 0.0:
            raise ParameterError(f"horizon must be positive, got {self.T}")
        if self.s <= 0.0:
            raise ParameterError(f"s must be positive, got {self.s}")

    def theta(self, t):
        t = np.asarray(t, dtype=float)
        u = t * (self.T - t)
        with np.errstate(divide="ignore"):
            return np.where(u > 0.0, 1.0 / u**4, np.inf)

    def theta_dt(self, t):
        t = np.asarray(t, dtype=float)
        u = t * (self.T - t)
        return -4.0 * (self.T - 2.0 * t) / u**5

    def theta_dtt(self, t):
        t = np.asarray(t, dtype=float)
        u = t * (self.T - t)
        return 8.0 / u**5 + 20.0 * (self.T - 2.0 * t) ** 2 / u**6

    def eta(self, points):
        pts = np.atleast_2d(points)
        return pts[:, -1] ** (2.0 - self.alpha)

    def xi(self, t, points):
        return np.multiply.outer(self.theta(t), self.gamma - self.eta(points))

    def xi_dt(self, t, points):
        return np.multiply.outer(self.theta_dt(t), self.gamma - self.eta(points))

    def grad_xi_n(self, t, points):
        """e_N component of grad xi (the other components vanish)."""
        pts = np.atleast_2d(points)
        return np.multiply.outer(self.theta(t),
                                 -(2.0 - self.alpha) * pts[:, -1] ** (1.0 - self.alpha))


def eval_weights(w: CarlemanWeights, t, points):
    """Pointwise weight values at one time; at t in {0, T} the limit
    convention Theta = +inf (so exp(-s xi) = 0) is returned."""
    t = float(t)
    if not (0.0 <= t <= w.T):
        raise ParameterError(f"t={t} outside [0, {w.T}]")
    theta = float(w.theta(t))
    if not math.isfinite(theta):
        pts = np.atleast_2d(points)
        inf = np.full(pts.shape[0], np.inf)
        grad = np.where(pts[:, -1] > 0.0, -np.inf, 0.0)
        return {"theta": np.inf, "xi": inf, "grad_xi": grad, "xi_t": inf}
    tarr = np.array([t])
    return {
        "theta": theta,
        "xi": w.xi(tarr, points)[0],
        "grad_xi": w.grad_xi_n(tarr, points)[0],
        "xi_t": w.xi_dt(tarr, points)[0],
    }


def _require_truncated(field: SpaceTimeField):
    if not isinstance(field.mesh.domain, TruncatedDomain):
        raise ContractError("Carleman budgets require a truncated (uniformly "
                            "parabolic) domain")


def transform(field: SpaceTimeField, w: CarlemanWeights) -> SpaceTimeField:
    """z = exp(-s xi) y, with z = 0 at t = 0 and t = T by the limit
    convention.  For large s the interior factor underflows to zero in
    linear arithmetic; budget computations therefore work in log space
    and never materialize z."""
    _require_truncated(field)
    if abs(field.grid.T - w.T) > 1e-12:
        raise ContractError("weight horizon does not match the field grid")
    t = field.grid.nodes
    z = np.zeros_like(field.values)
    xi = w.xi(t[1:-1], field.mesh.points)
    z[1:-1] = np.exp(-w.s * xi) * field.values[1:-1]
    return SpaceTimeField(field.mesh, field.grid, z, direction=field.direction)


def _grad_n(values, mesh):
    """Nodal derivative along the degenerate axis (3-point stencils)."""
    ax = mesh.axes[-1]
    v = values.reshape(values.shape[:-1] + mesh.shape)
    g = np.gradient(v, ax, axis=-1, edge_order=2)
    return g.reshape(values.shape)


@dataclass
class CarlemanBudget:
    """One evaluation of an inequality budget at a fixed parameter s.

    Linear-scale values may underflow to zero for large s; the log
    fields are always meaningful and all comparisons use them.
    """

    s: float
    which: str
    lhs_gradient: float
    lhs_zero_order: float
    rhs_source: float
    rhs_boundary: float
    log_lhs: float
    log_rhs_source: float
    log_rhs_boundary: float
    needed_c: float
    log_needed_c: float
    c_boundary: float
    holds: bool


class _FieldData:
    """Per-field quantities reused across parameter values s."""

    def __init__(self, field: SpaceTimeField, ops: OperatorPair):
        _require_truncated(field)
        self.field = field
        self.ops = ops
        mesh = field.mesh
        grid = field.grid
        t = grid.nodes[1:-1]
        self.log_theta = -4.0 * (np.log(t) + np.log(grid.T - t))
        self.gamma_minus_eta = None  # set by attach_weights
        self.y = field.values[1:-1]
        with np.errstate(divide="ignore"):
            self.log_y2 = 2.0 * np.log(np.abs(self.y))
        self.dy_dn = _grad_n(field.values, mesh)[1:-1]
        self.xn = mesh.xn
        self.log_xn = np.log(self.xn)
        fvals = field.source_values()[1:-1]
        self.fvals = fvals
        with np.errstate(divide="ignore"):
            self.log_f2 = 2.0 * np.log(np.abs(fvals))
        flux, _ = flux_history(field, ops, BoundaryPart.OBSERVED)
        self.flux = flux[1:-1]
        with np.errstate(divide="ignore"):
            self.log_flux2 = 2.0 * np.log(np.abs(self.flux))
        self.w_time = np.full(t.size, grid.dt)
        self.w_space = ops.lumped_full
        self.w_edge = np.asarray(
            edge_mass(mesh, BoundaryPart.OBSERVED).sum(axis=1)).ravel()
        self.edge_xn = mesh.xn[part_node_ids(mesh, BoundaryPart.OBSERVED)]

    def budget(self, w: CarlemanWeights, which: str, c_boundary: float = 1.0):
        alpha = w.alpha
        s = w.s
        gme = w.gamma - self.xn ** (2.0 - alpha)       # gamma - eta, per node
        xi = np.exp(self.log_theta)[:, None] * gme[None, :]
        two_s_xi = 2.0 * s * xi
        lw = np.log(self.w_time)[:, None] + np.log(self.w_space)[None, :]
        lt = self.log_theta[:, None]

        # boundary term: on the observed edge gamma - eta = gamma - 1
        edge_gme = w.gamma - self.edge_xn ** (2.0 - alpha)
        xi_edge = np.exp(self.log_theta)[:, None] * edge_gme[None, :]
        lw_edge = np.log(self.w_time)[:, None] + np.log(self.w_edge)[None, :]
        log_ib = logsumexp(lt + self.log_flux2 - 2.0 * s * xi_edge + lw_edge)
        log_rhs_b = np.log(s) + log_ib

        log_rhs_f = logsumexp(self.log_f2 - two_s_xi + lw)

        if which == "eq410":
            bracket = self.dy_dn + s * (2.0 - alpha) \
                * np.exp(self.log_theta)[:, None] \
                * (self.xn ** (1.0 - alpha))[None, :] * self.y
            with np.errstate(divide="ignore"):
                log_b2 = 2.0 * np.log(np.abs(bracket))
            log_i1 = logsumexp(lt + alpha * self.log_xn[None, :]
                               + log_b2 - two_s_xi + lw)
            log_i2 = logsumexp(3.0 * lt + (2.0 - alpha) * self.log_xn[None, :]
                               + self.log_y2 - two_s_xi + lw)
            log_lhs = np.logaddexp(np.log(s) + log_i1, 3.0 * np.log(s) + log_i2)
        elif which == "eq51":
            log_i1 = -np.inf
            log_lhs = np.log(s) + logsumexp(lt + self.log_y2 - two_s_xi + lw)
        else:
            raise ParameterError(f"unknown inequality selector {which!r}")

        # constant needed on the boundary term: (lhs - rhs_f)+ / rhs_b
        if log_lhs <= log_rhs_f:
            log_needed = -np.inf
        elif log_rhs_f == -np.inf:
            log_needed = log_lhs - log_rhs_b
        else:
            log_excess = log_lhs + np.log1p(-np.exp(log_rhs_f - log_lhs))
            log_needed = log_excess - log_rhs_b
        log_rhs = np.logaddexp(log_rhs_f, np.log(c_boundary) + log_rhs_b)
        with np.errstate(over="ignore"):
            lhs_grad = 0.0 if log_i1 == -np.inf else float(np.exp(np.log(s) + log_i1))
            if which == "eq410":
                lhs_zero = float(np.exp(3.0 * np.log(s) + log_i2))
            else:
                lhs_zero = float(np.exp(log_lhs))
            return CarlemanBudget(
                s=s,
                which=which,
                lhs_gradient=lhs_grad,
                lhs_zero_order=lhs_zero,
                rhs_source=float(np.exp(log_rhs_f)),
                rhs_boundary=float(np.exp(log_rhs_b)),
                log_lhs=float(log_lhs),
                log_rhs_source=float(log_rhs_f),
                log_rhs_boundary=float(log_rhs_b),
                needed_c=float(np.exp(log_needed)),
                log_needed_c=float(log_needed),
                c_boundary=c_boundary,
                holds=bool(log_lhs <= log_rhs + np.log1p(1e-9)),
            )


def check_inequality(field: SpaceTimeField, w: CarlemanWeights,
                     ops: OperatorPair, which: str = "eq410",
                     c_boundary: float = 1.0) -> CarlemanBudget:
    """Evaluate one inequality budget for a backward-convention solution.

    which = "eq410" uses the weighted gradient and zero-order terms of
    the transformed variable on the left; "eq51" uses the single
    zero-order term s II Theta y**2 exp(-2 s xi).  ``holds`` compares
    against rhs_source + c_boundary * rhs_boundary.
    """
    return _FieldData(field, ops).budget(w, which, c_boundary)


@dataclass(frozen=True)
class S0Fit:
    """Outcome of the empirical search for the parameter threshold."""

    found: bool
    s0: float | None
    c_boundary: float | None
    s_grid: tuple
    log_needed_c: tuple  # per field, per s


def find_s0(fields, w_template: CarlemanWeights, ops: OperatorPair, s_grid,
            which: str = "eq410") -> S0Fit:
    """Smallest grid parameter from which the inequality stabilizes.

    For every supplied field the needed boundary constant
    (lhs - rhs_source)+ / rhs_boundary is evaluated on the whole grid;
    s0 is the first grid point from which these are finite and
    non-increasing for every field (so the inequality with the fitted
    C = max needed constant over the region holds at every larger grid
    value).  A failure marker is returned when no grid point qualifies.
    """
    s_grid = [float(s) for s in s_grid]
    if not s_grid or any(b <= a for a, b in zip(s_grid, s_grid[1:])):
        raise ParameterError("s grid must be non-empty and ascending")
    if s_grid[0] < 1.0:
        raise ParameterError("s grid must start at or above 1")
    fields = list(fields)
    if not fields:
        raise ParameterError("need at least one field to calibrate")

    log_needed = np.empty((len(fields), len(s_grid)))
    for i, field in enumerate(fields):
        data = _FieldData(field, ops)
        for j, s in enumerate(s_grid):
            w = replace(w_template, s=s)
            log_needed[i, j] = data.budget(w, which).log_needed_c

    def tail_ok(j):
        tail = log_needed[:, j:]
        if not np.all(tail <= 700.0):  # exp(700) is the edge of double range
            return False
        # non-increasing up to 1e-6 relative: log-sum-exp accumulation
        # noise sits orders of magnitude below any meaningful C variation
        return bool(np.all(tail[:, 1:] <= tail[:, :-1] + 1e-6))

    for j in range(len(s_grid)):
        if tail_ok(j):
            c = float(np.exp(np.max(log_needed[:, j:])))
            return S0Fit(found=True, s0=s_grid[j], c_boundary=max(c, 1e-300),
                         s_grid=tuple(s_grid),
                         log_needed_c=tuple(map(tuple, log_needed)))
    return S0Fit(found=False, s0=None, c_boundary=None, s_grid=tuple(s_grid),
                 log_needed_c=tuple(map(tuple, log_needed)))


def p_residual(z_field: SpaceTimeField, f, w: CarlemanWeights,
               ops: OperatorPair) -> float:
    """L2(Q) norm of  exp(-s xi) f - P1 z - P2 z  on interior nodes.

    P1 z = z_t + 2 s (A grad z . grad xi) + s z div(A grad xi) and
    P2 z = div(A grad z) + s z xi_t + s**2 z (A grad xi . grad xi); the
    derivatives of z are discrete (central in time, 3-point in space,
    mass-lumped recovery for the divergence), the xi factors closed
    forms.  The identity holds for z transformed from a solution of the
    backward equation with source f; the returned norm decays to zero
    under simultaneous space-time refinement at first order or better.
    """
    _require_truncated(z_field)
    mesh = z_field.mesh
    grid = z_field.grid
    if abs(grid.T - w.T) > 1e-12:
        raise ContractError("weight horizon does not match the field grid")
    alpha, s = w.alpha, w.s
    t = grid.nodes[1:-1]
    z = z_field.values
    zt = (z[2:] - z[:-2]) / (2.0 * grid.dt)
    zmid = z[1:-1]
    dz_dn = _grad_n(zmid, mesh)
    div_adz = -(ops.K_full @ zmid.T).T / ops.lumped_full[None, :]
    xn = mesh.xn
    theta = w.theta(t)[:, None]
    theta_dt = w.theta_dt(t)[:, None]
    gme = (w.gamma - xn ** (2.0 - alpha))[None, :]

    p1 = zt - 2.0 * s * (2.0 - alpha) * theta * xn[None, :] * dz_dn \
        - s * (2.0 - alpha) * theta * zmid
    p2 = div_adz + s * zmid * theta_dt * gme \
        + s**2 * (2.0 - alpha) ** 2 * theta**2 * (xn ** (2.0 - alpha))[None, :] * zmid

    if f is None:
        fvals = np.zeros_like(zmid)
    elif callable(f):
        fvals = np.broadcast_to(np.asarray(f(mesh.points), dtype=float), zmid.shape)
    else:
        fvals = np.asarray(f, dtype=float)
        if fvals.shape == (grid.steps + 1, mesh.n_nodes):
            fvals = fvals[1:-1]
        if fvals.shape != zmid.shape:
            raise ContractError("source shape does not match the field")
    xi = theta * gme
    resid = np.exp(-s * xi) * fvals - p1 - p2

    ii = mesh.interior
    w_space = ops.lumped_full[ii]
    sq = np.sum(resid[:, ii] ** 2 * w_space[None, :], axis=1)
    return float(np.sqrt(np.sum(sq) * grid.dt))
