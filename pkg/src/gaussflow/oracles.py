"""Reference solutions for validating the solver.

* the grim reaper ``u = t - log cos x`` (n = 1, alpha = 1, f = 1);
* vertical translators of the n = 1 flow, tabulated from their profile ODE;
* manufactured polynomial solutions with a closed-form source term;
* the osculating-paraboloid initial surface under a sphere barrier.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.interpolate import CubicSpline

from .anisotropy import AnisotropyDescriptor, convexity_certificate, homogeneous_value
from .errors import DomainError, InvalidArgumentError, PreconditionError
from .graph_geometry import GraphGrid, flow_rhs


def grim_reaper(x, t):
    """Exact translating solution of u_t = u'' / (1 + u'^2) on |x| < pi/2."""
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) >= 0.5 * np.pi):
        raise DomainError("grim reaper is defined only for |x| < pi/2")
    value = t - np.log(np.cos(x))
    return value if np.ndim(value) else float(value)


@dataclass
class OracleSolution:
    """A reference solution ``u_e(x, t)`` with its validity domain."""

    id: str
    profile: Callable[[np.ndarray, float], np.ndarray]
    half_width: float
    params: dict = field(default_factory=dict)
    tolerance: float = 0.0

    def __call__(self, points, t):
        points = np.asarray(points, dtype=float)
        return self.profile(points, t)


def grim_reaper_solution() -> OracleSolution:
    def u(points, t):
        return grim_reaper(points[..., 0], t)
    return OracleSolution("grim_reaper", u, 0.5 * np.pi, {"alpha": 1.0, "c": 1.0}, tolerance=0.0)


# slope beyond which the profile is treated as blown up (about 1e-3 short of a
# tan-type singularity at step 1e-4, where RK4 is still resolved)
SLOPE_LIMIT = 1e3


def _rk4(deriv, y0, h, steps):
    ys = np.empty((steps + 1, 2))
    ys[0] = y0
    y = np.array(y0, dtype=float)
    for i in range(steps):
        k1 = deriv(y)
        k2 = deriv(y + 0.5 * h * k1)
        k3 = deriv(y + 0.5 * h * k2)
        k4 = deriv(y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        ys[i + 1] = y
        if not np.all(np.isfinite(y)) or abs(y[1]) > SLOPE_LIMIT:
            return ys[: i + 1]
    return ys


def _support_on_slope(desc):
    """f((p, -1) / sqrt(1 + p^2)) as a fast scalar function of the slope p."""
    if desc.family == "constant":
        return lambda p: desc.c
    if desc.family == "shifted_sphere":
        w0, w1 = desc.center
        r = desc.radius
        return lambda p: r + (w0 * p - w1) / math.sqrt(1 + p * p)
    if desc.family == "ellipsoid":
        a0, a1 = desc.axes
        return lambda p: math.sqrt(a0 * a0 * p * p + a1 * a1) / math.sqrt(1 + p * p)
    return lambda p: float(homogeneous_value(desc, np.array([p, -1.0]) / math.sqrt(1 + p * p)))


def _integrate_translator(alpha, c, fslope, half_width, h):
    expo = (3 * alpha - 1) / 2

    def branch(fs):
        def deriv(y):
            q = y[1]
            return np.array([q, (c * (1 + q * q) ** expo / fs(q)) ** (1.0 / alpha)])
        return deriv

    steps = int(round(half_width / h))
    # both branches integrate in s = |x|; on the left the slope is -dU/ds
    right = _rk4(branch(fslope), (0.0, 0.0), h, steps)
    left = _rk4(branch(lambda q: fslope(-q)), (0.0, 0.0), h, steps)
    m = min(len(right), len(left))
    xs = h * np.arange(m)
    x = np.concatenate([-xs[:0:-1], xs])
    u = np.concatenate([left[1:m, 0][::-1], right[:m, 0]])
    return x, u, (m - 1) * h


def translator_profile(alpha: float, c: float, desc: AnisotropyDescriptor,
                       half_width: float, step: float = 1e-4) -> OracleSolution:
    """Vertical translator u_e(x, t) = U(x) + c t of the n = 1 flow.

    U solves f(nu) U''^alpha / (1 + U'^2)^((3 alpha - 1) / 2) = c with
    U(0) = U'(0) = 0, integrated by classical RK4 at ``step`` in both
    directions and interpolated by a cubic spline.  The ODE is re-solved at
    half the step; the difference is stored as ``tolerance``.
    """
    if not (alpha > 0 and c > 0):
        raise PreconditionError("translator needs alpha > 0 and c > 0")
    if desc.dim != 2:
        raise PreconditionError("translators are tabulated for n = 1 only")
    convexity_certificate(desc, 400)
    fslope = _support_on_slope(desc)
    x, u, reach = _integrate_translator(alpha, c, fslope, half_width, step)
    x2, u2, _ = _integrate_translator(alpha, c, fslope, reach, step / 2)
    consistency = float(np.max(np.abs(u2[::2][: len(u)] - u))) if len(u2[::2]) >= len(u) else float("nan")
    if reach < half_width - 0.5 * step:
        warnings.warn(f"translator slope blows up before {half_width}; domain reduced to {reach:.6g}",
                      RuntimeWarning, stacklevel=2)
    spline = CubicSpline(x, u)

    def profile(points, t):
        xq = points[..., 0]
        if np.any(np.abs(xq) > reach + 1e-12):
            raise DomainError(f"translator profile tabulated only on |x| <= {reach:.6g}")
        return spline(xq) + c * t

    return OracleSolution("translator", profile, reach,
                          {"alpha": alpha, "c": c, "anisotropy": desc.to_dict()},
                          tolerance=consistency)


class Polynomial:
    """Polynomial in (x_1[, x_2], t) with exact derivatives.

    ``coef[i, j]`` (n = 1) or ``coef[i, j, k]`` (n = 2) multiplies
    ``x_1^i t^j`` or ``x_1^i x_2^j t^k``.
    """

    def __init__(self, coef):
        self.coef = np.asarray(coef, dtype=float)
        if self.coef.ndim not in (2, 3):
            raise InvalidArgumentError("coefficient array must be 2-d (n=1) or 3-d (n=2)")
        self.n = self.coef.ndim - 1

    def _eval(self, coef, points, t):
        t = np.broadcast_to(np.asarray(t, dtype=float), points.shape[:-1])
        if self.n == 1:
            return P.polyval2d(points[..., 0], t, coef)
        return P.polyval3d(points[..., 0], points[..., 1], t, coef)

    def value(self, points, t):
        return self._eval(self.coef, np.asarray(points, dtype=float), t)

    def __call__(self, points, t):
        return self.value(points, t)

    def derivative(self, axes):
        coef = self.coef
        for ax in axes:
            coef = P.polyder(coef, axis=ax)
        return Polynomial(coef)

    def time_derivative(self):
        return self.derivative([self.n])

    def gradient(self, points, t):
        return np.stack([self.derivative([i]).value(points, t) for i in range(self.n)], axis=-1)

    def hessian(self, points, t):
        rows = [np.stack([self.derivative([i, j]).value(points, t) for j in range(self.n)], axis=-1)
                for i in range(self.n)]
        return np.stack(rows, axis=-2)

    @classmethod
    def from_terms(cls, n, terms):
        """Build from ``{(powers...): coefficient}`` with powers over (x.., t)."""
        deg = np.max(np.array(list(terms.keys())), axis=0) + 1
        coef = np.zeros(tuple(int(d) for d in deg))
        for powers, value in terms.items():
            coef[tuple(powers)] += value
        if coef.ndim != n + 1:
            raise InvalidArgumentError("term powers must cover x and t")
        return cls(coef)


def manufactured_source(u_poly: Polynomial, desc: AnisotropyDescriptor, alpha: float,
                        domain=None) -> Callable[[np.ndarray, float], np.ndarray]:
    """Source S = d/dt u_poly - rhs(u_poly) making u_poly an exact solution.

    ``domain``, if given as ``(points, times)``, is checked for strict
    convexity of u_poly before the source is returned.
    """
    if desc.dim != u_poly.n + 1:
        raise PreconditionError("anisotropy dimension does not match the polynomial")
    ut = u_poly.time_derivative()

    def convex_det(points, t):
        hess = u_poly.hessian(points, t)
        det = hess[..., 0, 0] if u_poly.n == 1 else np.linalg.det(hess)
        if np.any(~((det > 0) & (hess[..., 0, 0] > 0))):
            raise InvalidArgumentError("manufactured polynomial is not strictly convex on the domain")
        return hess, det

    if domain is not None:
        points, times = domain
        for t in np.atleast_1d(times):
            convex_det(np.asarray(points, dtype=float), t)

    def source(points, t):
        points = np.asarray(points, dtype=float)
        hess, det = convex_det(points, t)
        rhs = flow_rhs(u_poly.gradient(points, t), hess, desc, alpha, det=det)
        return ut.value(points, t) - rhs

    return source


def grid_from_spec(origin, spacing, extents, heights: Callable[[np.ndarray], np.ndarray],
                   height_cap=np.inf, t=0.0) -> GraphGrid:
    origin = np.atleast_1d(np.asarray(origin, dtype=float))
    axes = [origin[i] + spacing * np.arange(m) for i, m in enumerate(extents)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    u = heights(pts)
    active = np.isfinite(u) & (u < height_cap)
    return GraphGrid(origin, spacing, u, active, t)


def sphere_cap_initial(R: float, center, origin, spacing, extents, height_cap=np.inf) -> GraphGrid:
    """Paraboloid osculating the lower cap of the ball B_R(center) at its apex.

    The ball lies above the graph: u0 <= center_last - sqrt(R^2 - |x - c|^2)
    on the ball's shadow.
    """
    center = np.asarray(center, dtype=float)
    n = len(extents)
    if center.size != n + 1 or not R > 0:
        raise PreconditionError("sphere cap needs R > 0 and a centre in R^{n+1}")
    cx, cz = center[:n], center[n]

    def heights(pts):
        return cz - R + np.sum((pts - cx) ** 2, axis=-1) / (2 * R)

    grid = grid_from_spec(origin, spacing, extents, heights, height_cap)
    pts = grid.points()
    r = np.linalg.norm(pts - cx, axis=-1)
    if not np.any(grid.interior() & (r < R)):
        raise PreconditionError("sphere cap does not fit in the grid")
    return grid
