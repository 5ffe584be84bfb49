"""Support-function geometry of a Wulff shape.

An anisotropy is the support function ``f`` of a smooth, closed, uniformly
convex body ``W`` in R^{n+1} (n = 1, 2).  Everything here works through the
1-homogeneous extension ``F(xi) = |xi| f(xi / |xi|)``:

* the ambient gradient ``DF(x)`` at a unit vector ``x`` is the point of ``W``
  with outer normal ``x`` (``f(x) x + grad_S f(x)``);
* the ambient Hessian ``D^2F(x)`` restricted to ``x^perp`` is the radii
  matrix ``hess_S f + f g`` whose eigenvalues are the principal radii of
  curvature of ``W``.

All functions accept a single vector of shape ``(d,)`` or a stack of shape
``(..., d)`` with ``d = n + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .errors import (
    InvalidArgumentError,
    InvalidDescriptorError,
    NotUniformlyConvexError,
    NumericalFailureError,
    PreconditionError,
)

FAMILIES = ("constant", "shifted_sphere", "ellipsoid", "perturbed")

UNIT_TOL = 1e-12
CONVEXITY_THRESHOLD = 1e-6
DEFAULT_FD_STEP = 1e-5
GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


@dataclass(frozen=True, eq=False)
class AnisotropyDescriptor:
    """Closed-form support function on the unit sphere of R^dim.

    Use the ``constant``, ``shifted_sphere``, ``ellipsoid`` and ``perturbed``
    constructors rather than instantiating directly.  A perturbed descriptor
    adds degree-1 terms ``amplitude * <v, x>`` to a base descriptor; these
    translate the Wulff shape, which is how recentring at a point is
    represented.
    """

    family: str
    dim: int
    c: float = 1.0
    center: np.ndarray | None = None
    radius: float = 1.0
    axes: np.ndarray | None = None
    base: AnisotropyDescriptor | None = None
    terms: tuple = field(default=())
    fd_step: float = DEFAULT_FD_STEP

    @property
    def n(self) -> int:
        return self.dim - 1

    @classmethod
    def constant(cls, c=1.0, dim=2, fd_step=DEFAULT_FD_STEP):
        if not c > 0:
            raise InvalidDescriptorError(f"constant anisotropy needs c > 0, got {c}")
        _check_dim(dim)
        return cls("constant", int(dim), c=float(c), fd_step=float(fd_step))

    @classmethod
    def shifted_sphere(cls, center, radius=1.0, fd_step=DEFAULT_FD_STEP):
        center = np.asarray(center, dtype=float)
        _check_dim(center.size)
        if not radius > 0:
            raise InvalidDescriptorError(f"sphere radius must be positive, got {radius}")
        center = center.copy()
        center.setflags(write=False)
        return cls("shifted_sphere", center.size, center=center, radius=float(radius),
                   fd_step=float(fd_step))

    @classmethod
    def ellipsoid(cls, axes, fd_step=DEFAULT_FD_STEP):
        axes = np.asarray(axes, dtype=float)
        _check_dim(axes.size)
        if np.any(~(axes > 0)):
            raise InvalidDescriptorError(f"ellipsoid axes must be positive, got {axes.tolist()}")
        axes = axes.copy()
        axes.setflags(write=False)
        return cls("ellipsoid", axes.size, axes=axes, fd_step=float(fd_step))

    @classmethod
    def perturbed(cls, base, terms, fd_step=DEFAULT_FD_STEP):
        if not isinstance(base, AnisotropyDescriptor):
            raise InvalidDescriptorError("perturbed descriptor needs a base descriptor")
        frozen = []
        for coeffs, amplitude in terms:
            v = np.array(coeffs, dtype=float)
            if v.shape != (base.dim,):
                raise InvalidDescriptorError(
                    f"perturbation coefficients must have length {base.dim}, got {v.shape}")
            v.setflags(write=False)
            frozen.append((v, float(amplitude)))
        return cls("perturbed", base.dim, base=base, terms=tuple(frozen), fd_step=float(fd_step))

    def to_dict(self) -> dict:
        if self.family == "constant":
            params = {"c": self.c, "dim": self.dim}
        elif self.family == "shifted_sphere":
            params = {"center": self.center.tolist(), "radius": self.radius}
        elif self.family == "ellipsoid":
            params = {"axes": self.axes.tolist()}
        else:
            params = {
                "base": self.base.to_dict(),
                "terms": [{"coefficients": v.tolist(), "amplitude": a} for v, a in self.terms],
            }
        return {"family": self.family, "parameters": params, "fd_step": self.fd_step}

    @classmethod
    def from_dict(cls, data: dict) -> AnisotropyDescriptor:
        try:
            family = data["family"]
            params = dict(data.get("parameters", {}))
            fd_step = float(data.get("fd_step", DEFAULT_FD_STEP))
        except (KeyError, TypeError) as exc:
            raise InvalidDescriptorError(f"malformed descriptor: {data!r}") from exc
        expected = {
            "constant": {"c", "dim"},
            "shifted_sphere": {"center", "radius"},
            "ellipsoid": {"axes"},
            "perturbed": {"base", "terms"},
        }
        if family not in expected:
            raise InvalidDescriptorError(f"unknown anisotropy family {family!r}")
        unknown = set(params) - expected[family]
        if unknown:
            raise InvalidDescriptorError(f"unknown parameters for {family}: {sorted(unknown)}")
        if family == "constant":
            return cls.constant(params.get("c", 1.0), params.get("dim", 2), fd_step)
        if family == "shifted_sphere":
            return cls.shifted_sphere(params["center"], params.get("radius", 1.0), fd_step)
        if family == "ellipsoid":
            return cls.ellipsoid(params["axes"], fd_step)
        terms = [(t["coefficients"], t["amplitude"]) for t in params.get("terms", [])]
        return cls.perturbed(cls.from_dict(params["base"]), terms, fd_step)

    def __repr__(self):
        return f"AnisotropyDescriptor({self.to_dict()!r})"


def _check_dim(dim):
    if dim not in (2, 3):
        raise InvalidDescriptorError(f"ambient dimension must be 2 or 3, got {dim}")


def _as_points(desc, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != desc.dim:
        raise PreconditionError(f"expected vectors of length {desc.dim}, got shape {x.shape}")
    return x


def _check_unit(x):
    norms = np.linalg.norm(x, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise PreconditionError("support function is evaluated on unit vectors only")


def homogeneous_value(desc: AnisotropyDescriptor, xi) -> np.ndarray:
    """The 1-homogeneous extension F(xi) for arbitrary non-zero xi."""
    xi = _as_points(desc, xi)
    if desc.family == "constant":
        return desc.c * np.linalg.norm(xi, axis=-1)
    if desc.family == "shifted_sphere":
        return desc.radius * np.linalg.norm(xi, axis=-1) + xi @ desc.center
    if desc.family == "ellipsoid":
        return np.sqrt(np.sum((desc.axes * xi) ** 2, axis=-1))
    value = homogeneous_value(desc.base, xi)
    for v, amplitude in desc.terms:
        value = value + amplitude * (xi @ v)
    return value


def evaluate_support(desc: AnisotropyDescriptor, x) -> np.ndarray | float:
    """Support function f(x) at unit vector(s) x; raises if f is not positive."""
    x = _as_points(desc, x)
    _check_unit(x)
    value = homogeneous_value(desc, x)
    if np.any(~(value > 0)):
        raise InvalidDescriptorError("support function is not positive: origin lies outside the body")
    return value if np.ndim(value) else float(value)


def _analytic_derivatives(desc, x):
    d = desc.dim
    eye = np.eye(d)
    proj = eye - x[..., :, None] * x[..., None, :]
    if desc.family == "constant":
        return desc.c * x, desc.c * proj
    if desc.family == "shifted_sphere":
        return desc.radius * x + desc.center, desc.radius * proj
    if desc.family == "ellipsoid":
        a2 = desc.axes ** 2
        F = np.sqrt(np.sum(a2 * x ** 2, axis=-1))[..., None]
        grad = a2 * x / F
        hess = (np.eye(d) * a2) / F[..., None] - grad[..., :, None] * grad[..., None, :] / F[..., None]
        return grad, hess
    grad, hess = _analytic_derivatives(desc.base, x)
    for v, amplitude in desc.terms:
        grad = grad + amplitude * v
    return grad, hess


def _fd_derivatives(desc, x):
    d = desc.dim
    h = desc.fd_step
    hh = 10.0 * h  # second differences lose two digits per halving; a larger step balances roundoff
    eye = np.eye(d)
    grad = np.empty(x.shape)
    for i in range(d):
        grad[..., i] = (homogeneous_value(desc, x + h * eye[i])
                        - homogeneous_value(desc, x - h * eye[i])) / (2 * h)
    hess = np.empty(x.shape + (d,))
    for i in range(d):
        for j in range(i, d):
            ei, ej = hh * eye[i], hh * eye[j]
            val = (homogeneous_value(desc, x + ei + ej) - homogeneous_value(desc, x + ei - ej)
                   - homogeneous_value(desc, x - ei + ej) + homogeneous_value(desc, x - ei - ej))
            hess[..., i, j] = hess[..., j, i] = val / (4 * hh * hh)
    return grad, hess


def homogeneous_derivatives(desc: AnisotropyDescriptor, x, method: str = "auto"):
    """Ambient gradient and Hessian of F at unit vector(s) x.

    ``method`` is ``"analytic"``, ``"fd"`` (central differences with step
    ``desc.fd_step``) or ``"auto"``, which uses finite differences only for
    the perturbed family.
    """
    x = _as_points(desc, x)
    _check_unit(x)
    if method == "auto":
        method = "fd" if desc.family == "perturbed" else "analytic"
    if method == "analytic":
        return _analytic_derivatives(desc, x)
    if method == "fd":
        return _fd_derivatives(desc, x)
    raise InvalidArgumentError(f"unknown differentiation method {method!r}")


def wulff_point(desc: AnisotropyDescriptor, x, method: str = "auto") -> np.ndarray:
    """Point of the Wulff shape whose outer normal is x."""
    grad, _ = homogeneous_derivatives(desc, x, method)
    return grad


def tangent_basis(x) -> np.ndarray:
    """Orthonormal basis of x^perp as columns, shape ``(..., d, d-1)``."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    if d == 2:
        return np.stack([-x[..., 1], x[..., 0]], axis=-1)[..., :, None]
    # Gram-Schmidt against the coordinate axis least aligned with x.
    k = np.argmin(np.abs(x), axis=-1)
    a = np.eye(3)[k]
    t1 = a - np.sum(a * x, axis=-1, keepdims=True) * x
    t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
    t2 = np.cross(x, t1)
    return np.stack([t1, t2], axis=-1)


def radii_matrix(desc: AnisotropyDescriptor, x, basis=None, method: str = "auto") -> np.ndarray:
    """Radii-of-curvature matrix of the Wulff shape in a tangent basis at x."""
    x = _as_points(desc, x)
    if basis is None:
        basis = tangent_basis(x)
    else:
        basis = np.asarray(basis, dtype=float)
        gram = np.swapaxes(basis, -1, -2) @ basis
        if not np.allclose(gram, np.eye(desc.n), atol=1e-10):
            raise PreconditionError("tangent basis is not orthonormal")
        if np.any(np.abs(np.einsum("...i,...ij->...j", x, basis)) > 1e-10):
            raise PreconditionError("tangent basis is not orthogonal to x")
    _, hess = homogeneous_derivatives(desc, x, method)
    r = np.swapaxes(basis, -1, -2) @ hess @ basis
    return 0.5 * (r + np.swapaxes(r, -1, -2))


def sphere_samples(dim: int, count: int) -> np.ndarray:
    """Deterministic quasi-uniform points on S^{dim-1}.

    Uniform angles on the circle, a Fibonacci lattice on S^2.
    """
    k = np.arange(count)
    if dim == 2:
        phi = 2 * np.pi * k / count
        return np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    z = 1.0 - (2 * k + 1) / count
    r = np.sqrt(1.0 - z * z)
    phi = k * GOLDEN_ANGLE
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def _frame(e_dir):
    e = np.asarray(e_dir, dtype=float)
    return e, tangent_basis(e)


def _lower_params(dim, count):
    """Parameters of samples on the closed lower hemisphere {<x, e> <= 0}.

    For dim 2 a single angle phi in [pi/2, 3pi/2] with
    x = cos(phi) e + sin(phi) w.  For dim 3 pairs (theta, phi) with polar
    angle theta in [pi/2, pi] from e; the equator ring comes first so ties
    resolve to equator points.
    """
    if dim == 2:
        return np.linspace(0.5 * np.pi, 1.5 * np.pi, count)[:, None]
    ring = max(8, int(round(2.0 * math.sqrt(count))))
    inner = max(count - ring, 1)
    phi_ring = 2 * np.pi * np.arange(ring) / ring
    k = np.arange(inner)
    theta_in = np.arccos(-(k + 0.5) / inner)
    phi_in = k * GOLDEN_ANGLE
    theta = np.concatenate([np.full(ring, 0.5 * np.pi), theta_in])
    phi = np.concatenate([phi_ring, phi_in])
    return np.stack([theta, phi], axis=-1)


def _lower_points(e, w, params):
    if e.size == 2:
        phi = params[..., 0]
        return np.cos(phi)[..., None] * e + np.sin(phi)[..., None] * w[:, 0]
    theta, phi = params[..., 0], params[..., 1]
    tang = np.cos(phi)[..., None] * w[:, 0] + np.sin(phi)[..., None] * w[:, 1]
    return np.cos(theta)[..., None] * e + np.sin(theta)[..., None] * tang


def lower_hemisphere_samples(e_dir, count: int) -> np.ndarray:
    e, w = _frame(e_dir)
    return _lower_points(e, w, _lower_params(e.size, count))


def convexity_certificate(desc: AnisotropyDescriptor, sample_count: int = 2000):
    """Extreme principal radii of the Wulff shape over a sphere sample.

    Returns ``(lambda_lo, lambda_hi)``.  Raises NotUniformlyConvexError,
    carrying the offending direction, if the support function is not
    positive or the radii matrix is not uniformly positive definite.
    """
    if sample_count < 10:
        raise PreconditionError("convexity certificate needs at least 10 samples")
    x = sphere_samples(desc.dim, sample_count)
    f = homogeneous_value(desc, x)
    bad = np.flatnonzero(~(f > 0))
    if bad.size:
        raise NotUniformlyConvexError(
            f"support function not positive (f = {f[bad[0]]:.6g})", witness=x[bad[0]])
    eig = np.linalg.eigvalsh(radii_matrix(desc, x))
    lo = eig[:, 0]
    k = int(np.argmin(lo))
    if not lo[k] > CONVEXITY_THRESHOLD:
        raise NotUniformlyConvexError(
            f"radii matrix not positive definite (lambda_min = {lo[k]:.6g})", witness=x[k])
    return float(lo[k]), float(eig[:, -1].max())


def max_height_normal(desc: AnisotropyDescriptor, e_dir, samples: int = 10_000) -> np.ndarray:
    """Sampled normal x maximising <wulff_point(x), e_dir> over the whole sphere."""
    x = sphere_samples(desc.dim, samples)
    heights = wulff_point(desc, x) @ np.asarray(e_dir, dtype=float)
    return x[int(np.argmax(heights))]


def _lower_max(desc, e_dir, samples):
    """argmax of the Wulff height over normals in the lower hemisphere."""
    e, w = _frame(e_dir)
    params = _lower_params(desc.dim, samples)
    heights = wulff_point(desc, _lower_points(e, w, params)) @ e
    k = int(np.argmax(heights))
    best_p, best_h = params[k], heights[k]

    def neg_height(p):
        x = _lower_points(e, w, np.atleast_1d(np.asarray(p, dtype=float)))
        x = x / np.linalg.norm(x)
        return -float(wulff_point(desc, x) @ e)

    if desc.dim == 2:
        lo = params[max(k - 1, 0), 0]
        hi = params[min(k + 1, len(params) - 1), 0]
        res = minimize_scalar(neg_height, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-10, "maxiter": 500})
        if not np.isfinite(res.fun) or res.status == 1:
            raise NumericalFailureError("golden-section refinement did not converge")
        cand = np.array([res.x])
    else:
        res = minimize(neg_height, best_p, method="L-BFGS-B",
                       bounds=[(0.5 * np.pi, np.pi), (None, None)],
                       options={"ftol": 1e-15, "gtol": 1e-10, "maxiter": 500})
        if not np.isfinite(res.fun) or res.status == 1:
            raise NumericalFailureError("local refinement of the lower-hemisphere maximum did not converge")
        cand = res.x
    if -res.fun > best_h:
        best_p = cand
    x0 = _lower_points(e, w, best_p)
    return x0 / np.linalg.norm(x0)


def shift_point(desc: AnisotropyDescriptor, e_dir, t0: float = 0.5, samples: int = 10_000) -> np.ndarray:
    """Interior point z0 such that the support function about z0 has
    non-positive Wulff height along e_dir on the whole lower hemisphere.

    z0 interpolates between the highest Wulff point (normal e_dir) and the
    highest Wulff point whose normal points into the lower hemisphere.
    """
    if not 0.0 < t0 < 1.0:
        raise PreconditionError(f"t0 must lie in (0, 1), got {t0}")
    e = _as_points(desc, e_dir)
    _check_unit(e)
    convexity_certificate(desc, max(10, min(samples, 2000)))
    y1 = wulff_point(desc, e)
    y0 = wulff_point(desc, _lower_max(desc, e, samples))
    return t0 * y1 + (1.0 - t0) * y0


def verify_shift_property(desc: AnisotropyDescriptor, z0, e_dir, samples: int = 100_000) -> float:
    """max over sampled lower-hemisphere normals x of <wulff_point(x) - z0, e_dir>.

    The property holds when the returned margin is <= 0 (up to tolerance).
    """
    z0 = _as_points(desc, z0)
    e = _as_points(desc, e_dir)
    _check_unit(e)
    full = sphere_samples(desc.dim, samples)
    if np.any(full @ z0 >= homogeneous_value(desc, full)):
        raise InvalidArgumentError("z0 is not strictly inside the Wulff body")
    heights = (wulff_point(desc, lower_hemisphere_samples(e, samples)) - z0) @ e
    return float(heights.max())


def recenter(desc: AnisotropyDescriptor, z0) -> AnisotropyDescriptor:
    """Support function of the same Wulff shape measured from z0."""
    z0 = np.asarray(z0, dtype=float)
    if desc.family == "constant":
        return AnisotropyDescriptor.shifted_sphere(-z0, desc.c, desc.fd_step)
    if desc.family == "shifted_sphere":
        return AnisotropyDescriptor.shifted_sphere(desc.center - z0, desc.radius, desc.fd_step)
    if desc.family == "perturbed":
        terms = [*desc.terms, (-z0, 1.0)]
        return AnisotropyDescriptor.perturbed(desc.base, terms, desc.fd_step)
    return AnisotropyDescriptor.perturbed(desc, [(-z0, 1.0)], desc.fd_step)


def support_stats(desc: AnisotropyDescriptor, samples: int = 20_000) -> dict:
    """sup f, min f and sup |grad_S log f|^2 over a sphere sample."""
    x = sphere_samples(desc.dim, samples)
    f = evaluate_support(desc, x)
    grad = wulff_point(desc, x)
    tangential_sq = np.maximum(np.sum(grad * grad, axis=-1) - f * f, 0.0)
    return {
        "sup_f": float(f.max()),
        "min_f": float(f.min()),
        "sup_grad_log_f_sq": float((tangential_sq / f ** 2).max()),
    }
