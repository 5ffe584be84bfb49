"""Discrete differential geometry of a convex graph ``x_{n+1} = u(x)``.

Derivatives use second-order central differences on a uniform grid; the
mixed derivative uses the 4-point cross stencil.  Quantities are defined on
*interior* cells only: active cells whose whole 3^n neighbourhood is active.
That excludes a one-cell halo along the boundary of the active region, and
every estimate in the package is taken over interior cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .anisotropy import AnisotropyDescriptor, evaluate_support
from .errors import ConvexityLossError, PreconditionError

SNAPSHOT_FIELDS = ("u", "upsilon", "K", "H", "lambda_min", "psi", "speed")


@dataclass
class GraphGrid:
    """Height field on a uniform grid in R^n (n = 1 or 2).

    ``u`` has shape ``extents``; cell ``idx`` sits at
    ``origin + spacing * idx``.  Cells outside ``active`` carry no data.
    """

    origin: np.ndarray
    spacing: float
    u: np.ndarray
    active: np.ndarray | None = None
    t: float = 0.0

    def __post_init__(self):
        self.origin = np.atleast_1d(np.asarray(self.origin, dtype=float))
        self.u = np.asarray(self.u, dtype=float)
        if self.u.ndim not in (1, 2) or self.u.ndim != self.origin.size:
            raise PreconditionError("grid must be 1- or 2-dimensional with matching origin")
        if not self.spacing > 0:
            raise PreconditionError("grid spacing must be positive")
        if self.active is None:
            self.active = np.isfinite(self.u)
        else:
            self.active = np.asarray(self.active, dtype=bool) & np.isfinite(self.u)
        self.spacing = float(self.spacing)
        self.t = float(self.t)

    @property
    def n(self) -> int:
        return self.u.ndim

    @property
    def extents(self) -> tuple:
        return self.u.shape

    def axes(self) -> list:
        return [self.origin[i] + self.spacing * np.arange(m) for i, m in enumerate(self.extents)]

    def points(self) -> np.ndarray:
        """Cell coordinates, shape ``extents + (n,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def interior(self) -> np.ndarray:
        return interior_mask(self.active)

    def replace(self, **changes) -> GraphGrid:
        return replace(self, **changes)

    def copy(self) -> GraphGrid:
        return GraphGrid(self.origin.copy(), self.spacing, self.u.copy(), self.active.copy(), self.t)


def interior_mask(active: np.ndarray) -> np.ndarray:
    """Active cells whose full 3^n stencil neighbourhood is active."""
    padded = np.pad(active, 1, constant_values=False)
    out = np.ones(active.shape, dtype=bool)
    shape = active.shape
    if active.ndim == 1:
        for di in (0, 1, 2):
            out &= padded[di:di + shape[0]]
    else:
        for di in (0, 1, 2):
            for dj in (0, 1, 2):
                out &= padded[di:di + shape[0], dj:dj + shape[1]]
    return out


@dataclass
class PointGeometry:
    Du: np.ndarray
    D2u: np.ndarray
    upsilon: float
    normal: np.ndarray
    metric: np.ndarray
    second_form: np.ndarray
    gauss: float
    mean: float
    lambda_min: float


@dataclass
class GraphGeometry:
    """Geometric fields over a grid; NaN outside ``mask``."""

    mask: np.ndarray
    Du: np.ndarray
    D2u: np.ndarray
    det: np.ndarray
    upsilon: np.ndarray
    K: np.ndarray
    H: np.ndarray
    lambda_min: np.ndarray
    hess_lambda_min: np.ndarray = field(repr=False)

    @property
    def normal(self) -> np.ndarray:
        nu = np.concatenate([self.Du, -np.ones(self.Du.shape[:-1] + (1,))], axis=-1)
        return nu / self.upsilon[..., None]


def central_derivatives(u: np.ndarray, h: float):
    """Du and D2u at the cells of ``u[1:-1, ...]`` (every axis trimmed by one)."""
    if u.ndim == 1:
        du = (u[2:] - u[:-2]) / (2 * h)
        d2u = (u[2:] - 2 * u[1:-1] + u[:-2]) / (h * h)
        return du[:, None], d2u[:, None, None]
    c = u[1:-1, 1:-1]
    ux = (u[2:, 1:-1] - u[:-2, 1:-1]) / (2 * h)
    uy = (u[1:-1, 2:] - u[1:-1, :-2]) / (2 * h)
    uxx = (u[2:, 1:-1] - 2 * c + u[:-2, 1:-1]) / (h * h)
    uyy = (u[1:-1, 2:] - 2 * c + u[1:-1, :-2]) / (h * h)
    uxy = (u[2:, 2:] - u[2:, :-2] - u[:-2, 2:] + u[:-2, :-2]) / (4 * h * h)
    du = np.stack([ux, uy], axis=-1)
    d2u = np.stack([np.stack([uxx, uxy], axis=-1), np.stack([uxy, uyy], axis=-1)], axis=-2)
    return du, d2u


def pointwise_geometry(Du: np.ndarray, D2u: np.ndarray) -> dict:
    """Closed-form graph curvatures from stacked first and second derivatives.

    For n = 2 the eigenvalues of g^{-1} h solve the 2x2 pencil; the smaller
    root is written as 2K / (H + sqrt(H^2 - 4K)) to avoid cancellation.
    """
    n = Du.shape[-1]
    w2 = 1.0 + np.sum(Du * Du, axis=-1)
    upsilon = np.sqrt(w2)
    if n == 1:
        det = D2u[..., 0, 0]
        K = det / upsilon ** 3
        H = K
        lam = K
        hess_lam = det
    else:
        a, b, c = D2u[..., 0, 0], D2u[..., 0, 1], D2u[..., 1, 1]
        p, q = Du[..., 0], Du[..., 1]
        det = a * c - b * b
        K = det / w2 ** 2
        # H = g^{ij} h_ij with g^{-1} = I - Du Du^T / w2, h = D2u / upsilon
        H = ((1 + q * q) * a - 2 * p * q * b + (1 + p * p) * c) / (w2 * upsilon)
        disc = np.sqrt(np.maximum(H * H - 4 * K, 0.0))
        lam = 2 * K / (H + disc)
        tr = a + c
        hess_lam = 2 * det / (tr + np.sqrt(np.maximum(tr * tr - 4 * det, 0.0)))
    return {"det": det, "upsilon": upsilon, "K": K, "H": H, "lambda_min": lam,
            "hess_lambda_min": hess_lam}


def _first_nonconvex(mask, det, d2u_00):
    bad = mask & ~((det > 0) & (d2u_00 > 0))
    if bad.any():
        return tuple(int(i) for i in np.argwhere(bad)[0])
    return None


def geometry(grid: GraphGrid, check: bool = True) -> GraphGeometry:
    """All pointwise geometric fields of ``grid`` on its interior cells.

    With ``check`` (the default) a non-positive-definite discrete Hessian on
    any interior cell raises ConvexityLossError carrying that cell's index.
    """
    n = grid.n
    mask = grid.interior()
    shape = grid.extents
    Du = np.full(shape + (n,), np.nan)
    D2u = np.full(shape + (n, n), np.nan)
    inner = tuple(slice(1, -1) for _ in range(n))
    du, d2u = central_derivatives(grid.u, grid.spacing)
    Du[inner] = du
    D2u[inner] = d2u
    Du[~mask] = np.nan
    D2u[~mask] = np.nan
    with np.errstate(invalid="ignore", divide="ignore"):
        fields = pointwise_geometry(Du, D2u)
    if check:
        idx = _first_nonconvex(mask, fields["det"], D2u[..., 0, 0])
        if idx is not None:
            raise ConvexityLossError(f"discrete Hessian not positive definite at cell {idx}", idx=idx)
    return GraphGeometry(mask=mask, Du=Du, D2u=D2u, **fields)


def differentials(grid: GraphGrid, idx) -> PointGeometry:
    """Full differential data at one interior cell."""
    idx = tuple(int(i) for i in np.atleast_1d(idx))
    if len(idx) != grid.n or not all(0 <= i < m for i, m in zip(idx, grid.extents)):
        raise PreconditionError(f"index {idx} outside the grid")
    if not grid.interior()[idx]:
        raise PreconditionError(f"cell {idx} is not interior to the active region")
    patch = grid.u[tuple(slice(i - 1, i + 2) for i in idx)]
    du, d2u = central_derivatives(patch, grid.spacing)
    Du = du.reshape(grid.n)
    D2u = d2u.reshape(grid.n, grid.n)
    geo = pointwise_geometry(Du, D2u)
    if not (geo["det"] > 0 and D2u[0, 0] > 0):
        raise ConvexityLossError(f"discrete Hessian not positive definite at cell {idx}", idx=idx)
    upsilon = float(geo["upsilon"])
    return PointGeometry(
        Du=Du,
        D2u=D2u,
        upsilon=upsilon,
        normal=np.append(Du, -1.0) / upsilon,
        metric=np.eye(grid.n) + np.outer(Du, Du),
        second_form=D2u / upsilon,
        gauss=float(geo["K"]),
        mean=float(geo["H"]),
        lambda_min=float(geo["lambda_min"]),
    )


def gradient_function_field(grid: GraphGrid, geom: GraphGeometry | None = None) -> np.ndarray:
    """upsilon = sqrt(1 + |Du|^2) on interior cells, NaN elsewhere."""
    geom = geometry(grid) if geom is None else geom
    return geom.upsilon


def cutoff_field(grid: GraphGrid, N: float, beta: float, t: float | None = None) -> np.ndarray:
    """psi_beta = (N - beta t - u)_+ on active cells, 0 elsewhere."""
    if not N > 0:
        raise PreconditionError("cut-off level N must be positive")
    t = grid.t if t is None else t
    with np.errstate(invalid="ignore"):
        psi = np.maximum(N - beta * t - grid.u, 0.0)
    return np.where(grid.active, psi, 0.0)


def flow_rhs(Du: np.ndarray, D2u: np.ndarray, desc: AnisotropyDescriptor, alpha: float,
             det: np.ndarray | None = None) -> np.ndarray:
    """rho(Du) det(D2u)^alpha / (1 + |Du|^2)^((alpha (n + 2) - 1) / 2) pointwise."""
    n = Du.shape[-1]
    w2 = 1.0 + np.sum(Du * Du, axis=-1)
    if det is None:
        det = D2u[..., 0, 0] if n == 1 else np.linalg.det(D2u)
    nu = np.concatenate([Du, -np.ones(Du.shape[:-1] + (1,))], axis=-1) / np.sqrt(w2)[..., None]
    rho = evaluate_support(desc, nu)
    return rho * det ** alpha / w2 ** ((alpha * (n + 2) - 1) / 2)


def _check_desc_dim(grid, desc):
    if desc.dim != grid.n + 1:
        raise PreconditionError(
            f"anisotropy lives in R^{desc.dim} but the graph is in R^{grid.n + 1}")


def speed_field(grid: GraphGrid, desc: AnisotropyDescriptor, alpha: float,
                geom: GraphGeometry | None = None) -> np.ndarray:
    """Normal-graph speed du/dt of the scalar flow on interior cells, NaN elsewhere."""
    _check_desc_dim(grid, desc)
    geom = geometry(grid) if geom is None else geom
    out = np.full(grid.extents, np.nan)
    m = geom.mask
    out[m] = flow_rhs(geom.Du[m], geom.D2u[m], desc, alpha, det=geom.det[m])
    return out


def speed_via_curvature(grid: GraphGrid, desc: AnisotropyDescriptor, alpha: float,
                        geom: GraphGeometry | None = None) -> np.ndarray:
    """f(nu) K^alpha upsilon, algebraically equal to ``speed_field``."""
    _check_desc_dim(grid, desc)
    geom = geometry(grid) if geom is None else geom
    out = np.full(grid.extents, np.nan)
    m = geom.mask
    f = evaluate_support(desc, geom.normal[m])
    out[m] = f * geom.K[m] ** alpha * geom.upsilon[m]
    return out


def snapshot_table(grid: GraphGrid, desc: AnisotropyDescriptor, alpha: float,
                   N: float, beta: float = 0.0):
    """Header and rows of the snapshot CSV for all active cells.

    Rows follow lexicographic grid-index order; fields undefined on the
    boundary halo are NaN.
    """
    geom = geometry(grid, check=False)
    with np.errstate(invalid="ignore"):
        speed = np.full(grid.extents, np.nan)
        ok = geom.mask & (geom.det > 0)
        if ok.any():
            speed[ok] = flow_rhs(geom.Du[ok], geom.D2u[ok], desc, alpha, det=geom.det[ok])
    psi = cutoff_field(grid, N, beta)
    header = [f"x{i + 1}" for i in range(grid.n)] + list(SNAPSHOT_FIELDS)
    pts = grid.points()
    cols = [pts[..., i] for i in range(grid.n)]
    cols += [grid.u, geom.upsilon, geom.K, geom.H, geom.lambda_min, psi, speed]
    table = np.stack([c[grid.active] for c in cols], axis=-1)
    return header, table
