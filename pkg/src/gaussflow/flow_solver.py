"""Explicit time stepping of the scalar anisotropic alpha-Gauss curvature flow

    u_t = rho(Du) det(D^2 u)^alpha / (1 + |Du|^2)^((alpha (n + 2) - 1) / 2)

on a truncated grid, plus a numerical check of the evolution identity of the
gradient function along a computed trace.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .anisotropy import AnisotropyDescriptor, wulff_point
from .errors import (
    ConvexityFailureError,
    ConvexityLossError,
    NumericalFailureError,
    PreconditionError,
)
from .graph_geometry import GraphGeometry, GraphGrid, central_derivatives, geometry, speed_field

log = logging.getLogger(__name__)

BOUNDARY_POLICIES = ("frozen_dirichlet", "exact_dirichlet")

# u_exact(points, t) -> heights, with points of shape (..., n)
Field = Callable[[np.ndarray, float], np.ndarray]


@dataclass
class FlowConfig:
    alpha: float
    t_end: float
    cfl_safety: float = 0.2
    height_cap: float = np.inf
    boundary: str = "frozen_dirichlet"
    reference: Field | None = None
    snapshot_stride: int = 10
    source: Field | None = None
    max_retries: int = 10
    fixed_dt: float | None = None
    max_steps: int = 2_000_000

    def __post_init__(self):
        if not self.alpha > 0:
            raise PreconditionError("flow exponent alpha must be positive")
        if not self.t_end > 0:
            raise PreconditionError("t_end must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise PreconditionError("cfl_safety must lie in (0, 1]")
        if self.snapshot_stride < 1:
            raise PreconditionError("snapshot_stride must be at least 1")
        if self.boundary not in BOUNDARY_POLICIES:
            raise PreconditionError(f"unknown boundary policy {self.boundary!r}")
        if self.boundary == "exact_dirichlet" and self.reference is None:
            raise PreconditionError("exact_dirichlet needs a reference solution")


@dataclass
class StepInfo:
    t: float
    dt: float
    max_speed: float
    min_lambda_min: float
    retries: int


@dataclass
class FlowTrace:
    desc: AnisotropyDescriptor
    config: FlowConfig
    snapshots: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    failure: str | None = None
    failure_t: float | None = None

    @property
    def failed(self) -> bool:
        return self.failure is not None

    @property
    def times(self) -> np.ndarray:
        return np.array([g.t for g in self.snapshots])

    @property
    def final(self) -> GraphGrid:
        return self.snapshots[-1]


def stable_dt(grid: GraphGrid, desc: AnisotropyDescriptor, alpha: float,
              cfl_safety: float = 0.2, t_end: float | None = None,
              geom: GraphGeometry | None = None, speed: np.ndarray | None = None) -> float:
    """Explicit step from the linearised diffusion alpha * rhs * (D^2 u)^{-1}.

    dt = cfl_safety * h^2 / max(alpha * rhs * n / lambda_min(D^2 u)), capped
    at ``t_end - grid.t`` when ``t_end`` is given.
    """
    geom = geometry(grid) if geom is None else geom
    speed = speed_field(grid, desc, alpha, geom) if speed is None else speed
    m = geom.mask
    rate = alpha * speed[m] * grid.n / geom.hess_lambda_min[m]
    peak = float(rate.max()) if rate.size else 0.0
    dt = cfl_safety * grid.spacing ** 2 / peak if peak > 0 else np.inf
    if t_end is not None:
        dt = min(dt, t_end - grid.t)
    return dt


def _apply_boundary(grid, u_new, mask, t_new, config):
    if config.boundary == "exact_dirichlet":
        rim = grid.active & ~mask
        if rim.any():
            u_new[rim] = config.reference(grid.points()[rim], t_new)


def step_with_info(grid: GraphGrid, desc: AnisotropyDescriptor, config: FlowConfig,
                   dt: float | None = None):
    """One forward-Euler step with retry-halving on convexity loss.

    Returns the new grid and a StepInfo record.
    """
    geom = geometry(grid)
    speed = speed_field(grid, desc, config.alpha, geom)
    m = geom.mask
    if not m.any():
        raise NumericalFailureError("no interior cells left to update")
    if dt is None:
        if config.fixed_dt is not None:
            dt = min(config.fixed_dt, config.t_end - grid.t)
        else:
            dt = stable_dt(grid, desc, config.alpha, config.cfl_safety, config.t_end, geom, speed)
    if not np.isfinite(dt) or dt <= 0:
        raise NumericalFailureError(f"invalid time step {dt!r} at t={grid.t}")
    rate = speed[m]
    if config.source is not None:
        rate = rate + config.source(grid.points()[m], grid.t)
    last_idx = None
    for retries in range(config.max_retries + 1):
        h = dt / 2 ** retries
        u_new = grid.u.copy()
        u_new[m] += h * rate
        t_new = grid.t + h
        _apply_boundary(grid, u_new, m, t_new, config)
        if not np.all(np.isfinite(u_new[grid.active])):
            last_idx = None
            continue
        active = grid.active & (u_new < config.height_cap)
        candidate = GraphGrid(grid.origin, grid.spacing, u_new, active, t_new)
        try:
            geometry(candidate)
        except ConvexityLossError as exc:
            last_idx = exc.idx
            continue
        info = StepInfo(t=grid.t, dt=h, max_speed=float(np.max(speed[m])),
                        min_lambda_min=float(np.min(geom.lambda_min[m])), retries=retries)
        return candidate, info
    raise ConvexityFailureError(
        f"convexity lost at t={grid.t:.6g} after {config.max_retries} step halvings",
        t=grid.t, idx=last_idx)


def step(grid: GraphGrid, desc: AnisotropyDescriptor, config: FlowConfig,
         dt: float | None = None) -> GraphGrid:
    return step_with_info(grid, desc, config, dt)[0]


def run(grid0: GraphGrid, desc: AnisotropyDescriptor, config: FlowConfig) -> FlowTrace:
    """Integrate from ``grid0`` to ``config.t_end``.

    Snapshots are kept every ``snapshot_stride`` steps plus the initial and
    final state.  A numerical failure ends the run early; the partial trace
    is returned with ``failure`` set.
    """
    if desc.dim != grid0.n + 1:
        raise PreconditionError("anisotropy dimension does not match the grid")
    grid = grid0.copy()
    grid.active &= grid.u < config.height_cap
    geometry(grid)
    trace = FlowTrace(desc=desc, config=config, snapshots=[grid])
    steps = 0
    # relative guard so the final capped step is not followed by a roundoff-sized one
    t_stop = config.t_end * (1 - 1e-14)
    while grid.t < t_stop:
        if steps >= config.max_steps:
            trace.failure = f"step budget of {config.max_steps} exhausted at t={grid.t:.6g}"
            trace.failure_t = grid.t
            break
        try:
            grid, info = step_with_info(grid, desc, config)
        except NumericalFailureError as exc:
            log.warning("run aborted: %s", exc)
            trace.failure = str(exc)
            trace.failure_t = grid.t
            break
        steps += 1
        trace.diagnostics.append(info)
        if steps % config.snapshot_stride == 0:
            trace.snapshots.append(grid)
    if trace.snapshots[-1] is not grid:
        trace.snapshots.append(grid)
    return trace


@dataclass
class VEvolutionResult:
    residual: np.ndarray
    max_residual: float
    coarse_time_spacing: bool


def v_evolution_terms(grid: GraphGrid, desc: AnisotropyDescriptor, alpha: float):
    """Right-hand side of the gradient-function evolution and the tangential
    transport of grid points, evaluated on one snapshot.

    Returns ``(rhs, transport)``: the identity reads
    ``d/dt upsilon|_x + transport = rhs`` where ``transport = xdot . D upsilon``
    converts the grid time derivative into the derivative along the
    flow's own parametrisation (x moves with -K^alpha times the horizontal
    part of the Wulff point of the normal).
    """
    geom = geometry(grid)
    n, h = grid.n, grid.spacing
    v = geom.upsilon
    inner = tuple(slice(1, -1) for _ in range(n))
    dv_in, d2v_in = central_derivatives(v, h)
    dv = np.full(v.shape + (n,), np.nan)
    d2v = np.full(v.shape + (n, n), np.nan)
    dv[inner] = dv_in
    d2v[inner] = d2v_in

    m = geom.mask & np.all(np.isfinite(dv), axis=-1) & np.all(np.isfinite(d2v), axis=(-2, -1))
    Du, D2u = geom.Du[m], geom.D2u[m]
    w2 = 1.0 + np.sum(Du * Du, axis=-1)
    nu = geom.normal[m]
    W = wulff_point(desc, nu)
    f = np.sum(W * nu, axis=-1)
    Ka = geom.K[m] ** alpha
    # Christoffel symbols Gamma^k_ij = u_k u_ij / (1 + |Du|^2)
    gamma_dot = np.einsum("...k,...k->...", Du, dv[m]) / w2
    cov_hess = d2v[m] - gamma_dot[..., None, None] * D2u
    b = np.linalg.inv(D2u) * np.sqrt(w2)[..., None, None]   # inverse of h_ij = D2u / upsilon
    coef = alpha * f * Ka
    Lv = coef * np.einsum("...ij,...ij->...", b, cov_hess)
    grad_sq = coef * np.einsum("...ij,...i,...j->...", b, dv[m], dv[m])
    rhs = Lv - 2.0 / v[m] * grad_sq - coef * geom.H[m] * v[m]
    xdot = -Ka[..., None] * W[..., :n]
    transport = np.einsum("...i,...i->...", xdot, dv[m])

    rhs_full = np.full(v.shape, np.nan)
    tr_full = np.full(v.shape, np.nan)
    rhs_full[m] = rhs
    tr_full[m] = transport
    return rhs_full, tr_full


def verify_v_evolution(trace: FlowTrace, desc: AnisotropyDescriptor | None = None,
                       k: int | None = None) -> VEvolutionResult:
    """Pointwise residual of the gradient-function evolution identity at
    snapshot ``k``, with the time derivative from central differencing of
    snapshots ``k - 1`` and ``k + 1``.
    """
    desc = trace.desc if desc is None else desc
    snaps = trace.snapshots
    if k is None:
        k = len(snaps) // 2
    if not 0 < k < len(snaps) - 1:
        raise PreconditionError("snapshot index must have neighbours on both sides")
    prev, cur, nxt = snaps[k - 1], snaps[k], snaps[k + 1]
    span = nxt.t - prev.t
    h = cur.spacing
    coarse = max(cur.t - prev.t, nxt.t - cur.t) > h * h
    if coarse:
        log.warning("snapshot spacing exceeds h^2; time differencing is coarse")
    v_prev = geometry(prev).upsilon
    v_next = geometry(nxt).upsilon
    # second-order central difference for possibly unequal spacing
    a, c = cur.t - prev.t, nxt.t - cur.t
    v_cur = geometry(cur).upsilon
    dvdt = (a * a * v_next - c * c * v_prev + (c * c - a * a) * v_cur) / (a * c * span)
    rhs, transport = v_evolution_terms(cur, desc, trace.config.alpha)
    residual = dvdt + transport - rhs
    finite = np.isfinite(residual)
    max_res = float(np.max(np.abs(residual[finite]))) if finite.any() else float("nan")
    return VEvolutionResult(residual=residual, max_residual=max_res, coarse_time_spacing=coarse)
