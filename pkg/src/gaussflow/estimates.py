"""Local a priori estimates evaluated along a computed flow trace.

Each check compares an observed quantity with the closed-form bound of the
corresponding estimate and returns an ``EstimateRecord``.  The inequalities
hold for exact smooth solutions; a multiplicative slack (default 1.05)
absorbs discretisation error.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .anisotropy import support_stats
from .errors import DegenerateWindowError, ExtinctError, HypothesisViolationError, NotEnclosedError
from .flow_solver import FlowTrace
from .graph_geometry import cutoff_field, geometry

DEFAULT_SLACK = 1.05


@dataclass
class EstimateRecord:
    name: str
    theorem: str
    bound: float
    observed: float
    margin: float
    passed: bool
    slack: float = DEFAULT_SLACK
    location: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EstimateReport:
    records: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "records": [r.to_dict() for r in self.records]}


def _upper_pass(bound, observed, slack):
    """Upper-bound estimates: observed <= slack * bound."""
    return bool(observed <= slack * bound)


def _lower_pass(bound, observed, slack):
    """Lower-bound estimates: observed >= bound / slack."""
    return bool(observed * slack >= bound)


class _TraceView:
    """Per-snapshot geometry cached for repeated checks on one trace."""

    def __init__(self, trace: FlowTrace):
        self.trace = trace
        self.alpha = trace.config.alpha
        self.n = trace.snapshots[0].n
        self._geom = {}
        self._stats = None

    def geom(self, k):
        if k not in self._geom:
            self._geom[k] = geometry(self.trace.snapshots[k])
        return self._geom[k]

    @property
    def stats(self):
        if self._stats is None:
            self._stats = support_stats(self.trace.desc)
        return self._stats


_views: dict = {}


def _view(trace):
    key = id(trace)
    view = _views.get(key)
    if view is None or view.trace is not trace:
        view = _TraceView(trace)
        _views.clear()
        _views[key] = view
    return view


def _check_hypothesis(N, beta):
    if not (beta > 0 and N >= beta):
        raise HypothesisViolationError(
            f"estimate needs beta > 0 and N >= beta (got N={N}, beta={beta})")


def _initial_window(view, N):
    g0 = view.trace.snapshots[0]
    geom = view.geom(0)
    q = geom.mask & (g0.u < N)
    if not q.any():
        raise DegenerateWindowError(f"no interior cells with u(., 0) < {N}")
    return geom, q


def _loc(view, k, idx):
    return {"t": float(view.trace.snapshots[k].t), "snapshot": int(k),
            "cell": [int(i) for i in idx]}


def gradient_bound(N, beta, n, alpha, sup_f, sup_upsilon0):
    return max(N * sup_upsilon0, N / beta * n * alpha * max(sup_f, 1.0))


def gradient_bound_check(trace: FlowTrace, N: float, beta: float,
                         slack: float = DEFAULT_SLACK) -> EstimateRecord:
    """psi_beta * upsilon against max{N sup_Q upsilon(0), N n alpha max(sup f, 1) / beta}."""
    _check_hypothesis(N, beta)
    view = _view(trace)
    geom0, q = _initial_window(view, N)
    bound = gradient_bound(N, beta, view.n, view.alpha, view.stats["sup_f"],
                           float(geom0.upsilon[q].max()))
    worst, where = -np.inf, None
    for k, grid in enumerate(trace.snapshots):
        geom = view.geom(k)
        val = np.where(geom.mask, cutoff_field(grid, N, beta) * geom.upsilon, -np.inf)
        idx = np.unravel_index(int(np.argmax(val)), val.shape)
        if val[idx] > worst:
            worst, where = float(val[idx]), (k, idx)
    return EstimateRecord("gradient", "gradient estimate", bound, worst, bound - worst,
                          _upper_pass(bound, worst, slack), slack, _loc(view, *where),
                          {"N": N, "beta": beta, "sup_f": view.stats["sup_f"]})


def curvature_constant_C1(N, n, alpha, beta, sup_f, sup_grad_logf_sq):
    """Explicit constant in the lower bound on the smallest principal curvature."""
    lead = max((sup_f / (n * beta)) ** (1.0 / alpha), 1.0)
    inner = n * n * (1 + alpha) + (n * alpha + (1 + alpha) / alpha * sup_grad_logf_sq) * N ** n
    return lead * N ** ((n + alpha) / alpha) * inner ** ((1 + (n - 1) * alpha) / alpha)


def curvature_lower_bound_check(trace: FlowTrace, N: float, beta: float,
                                slack: float = DEFAULT_SLACK) -> EstimateRecord:
    """psi_beta^{-n(1 + 1/alpha)} lambda_min against its floor."""
    _check_hypothesis(N, beta)
    view = _view(trace)
    n, alpha = view.n, view.alpha
    gamma = n * (1 + 1 / alpha)
    geom0, q = _initial_window(view, N)
    st = view.stats
    C1 = curvature_constant_C1(N, n, alpha, beta, st["sup_f"], st["sup_grad_log_f_sq"])
    bound = min(N ** -gamma * float(geom0.lambda_min[q].min()), 1.0 / C1)
    worst, where = np.inf, None
    for k, grid in enumerate(trace.snapshots):
        geom = view.geom(k)
        psi = cutoff_field(grid, N, beta)
        sel = geom.mask & (psi > 0)
        if not sel.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(sel, psi ** -gamma * geom.lambda_min, np.inf)
        idx = np.unravel_index(int(np.argmin(val)), val.shape)
        if val[idx] < worst:
            worst, where = float(val[idx]), (k, idx)
    return EstimateRecord("curvature", "curvature lower bound", bound, worst, worst - bound,
                          _lower_pass(bound, worst, slack), slack, _loc(view, *where),
                          {"N": N, "beta": beta, "C1": C1})


def theta_lambda(trace: FlowTrace, N: float, t: float, condition_at: str = "sample"):
    """theta = sup upsilon^2 and Lambda = sup 1/lambda_min over recorded
    snapshots s <= t and cells in the sublevel set {u < N}.

    ``condition_at="sample"`` tests u < N at the sample time s;
    ``"final"`` tests it at time t.
    """
    view = _view(trace)
    ks = [k for k, g in enumerate(trace.snapshots) if g.t <= t]
    if not ks:
        raise DegenerateWindowError(f"no snapshots at or before t={t}")
    k_t = ks[-1]
    final_u = trace.snapshots[k_t].u
    theta, lam = -np.inf, -np.inf
    for k in ks:
        geom = view.geom(k)
        u = trace.snapshots[k].u if condition_at == "sample" else final_u
        sel = geom.mask & (u < N)
        if sel.any():
            theta = max(theta, float(np.max(geom.upsilon[sel] ** 2)))
            lam = max(lam, float(np.max(1.0 / geom.lambda_min[sel])))
    if not np.isfinite(theta):
        raise DegenerateWindowError(f"empty sublevel set {{u < {N}}} up to t={t}")
    return theta, lam


def speed_bound(theta, lam, N, n, alpha, sup_f, min_f):
    na = n * alpha
    return ((2 * theta) ** (1 + 1 / (2 * na)) * max(sup_f ** (1 / na), 1.0) * min_f ** (-1 / na)
            * (N * N + 2 * na * (N + lam * (4 * na + 1 + 4 * na * theta))))


def speed_bound_check(trace: FlowTrace, N: float, slack: float = DEFAULT_SLACK,
                      condition_at: str = "sample") -> EstimateRecord:
    """(t / (1 + t)) K^{1/n} psi^2 against the speed bound at every snapshot."""
    if not N > 0:
        raise HypothesisViolationError("speed estimate needs N > 0")
    view = _view(trace)
    n, alpha = view.n, view.alpha
    st = view.stats
    worst = None
    alt_worst = np.inf
    ratio_pass = True
    for k, grid in enumerate(trace.snapshots):
        geom = view.geom(k)
        theta, lam = theta_lambda(trace, N, grid.t, condition_at)
        bound = speed_bound(theta, lam, N, n, alpha, st["sup_f"], st["min_f"])
        psi = cutoff_field(grid, N, 0.0)
        val = np.where(geom.mask, grid.t / (1 + grid.t) * geom.K ** (1.0 / n) * psi ** 2, -np.inf)
        idx = np.unravel_index(int(np.argmax(val)), val.shape)
        observed = max(float(val[idx]), 0.0)
        margin = bound - observed
        ratio_pass &= _upper_pass(bound, observed, slack)
        if worst is None or margin < worst[0]:
            worst = (margin, bound, observed, k, idx, theta, lam)
        other = "final" if condition_at == "sample" else "sample"
        try:
            th2, lam2 = theta_lambda(trace, N, grid.t, other)
            alt_worst = min(alt_worst, speed_bound(th2, lam2, N, n, alpha, st["sup_f"], st["min_f"])
                            - observed)
        except DegenerateWindowError:
            pass
    margin, bound, observed, k, idx, theta, lam = worst
    notes = {"N": N, "theta": theta, "Lambda": lam, "sublevel_condition": condition_at,
             "alternate_condition_margin": alt_worst}
    return EstimateRecord("speed", "speed estimate", bound, observed, margin, bool(ratio_pass),
                          slack, _loc(view, k, idx), notes)


def extinction_time(R, n, alpha, sup_f):
    return R ** (1 + n * alpha) / ((1 + n * alpha) * sup_f)


def barrier_radius(R: float, t: float, n: int, alpha: float, sup_f: float) -> float:
    """Radius of the shrinking-sphere barrier started from radius R."""
    t_star = extinction_time(R, n, alpha, sup_f)
    if t > t_star:
        raise ExtinctError(f"barrier is extinct after t* = {t_star:.6g}", t_star)
    return (R ** (1 + n * alpha) - (1 + n * alpha) * t * sup_f) ** (1 / (1 + n * alpha))


def _cap_margin(grid, center, rho, active_only=True):
    n = grid.n
    pts = grid.points()
    r2 = np.sum((pts - center[:n]) ** 2, axis=-1)
    shadow = grid.active & (r2 < rho * rho)
    if not shadow.any():
        return np.inf, None
    cap = center[n] - np.sqrt(np.maximum(rho * rho - r2, 0.0))
    diff = np.where(shadow, cap - grid.u, np.inf)
    idx = np.unravel_index(int(np.argmin(diff)), diff.shape)
    return float(diff[idx]), idx


def enclosure_check(trace: FlowTrace, center, R: float, slack: float = DEFAULT_SLACK,
                    tol: float = 1e-12) -> EstimateRecord:
    """The ball of the shrinking radius about ``center`` stays above the graph."""
    view = _view(trace)
    center = np.asarray(center, dtype=float)
    n, alpha = view.n, view.alpha
    sup_f = view.stats["sup_f"]
    m0, _ = _cap_margin(trace.snapshots[0], center, R)
    if m0 < -tol:
        raise NotEnclosedError(f"ball B_R(center) is not above the initial graph (margin {m0:.3g})")
    t_star = extinction_time(R, n, alpha, sup_f)
    worst, where, vacuous = np.inf, None, 0
    for k, grid in enumerate(trace.snapshots):
        if grid.t >= t_star:
            vacuous += 1
            continue
        rho = barrier_radius(R, grid.t, n, alpha, sup_f)
        m, idx = _cap_margin(grid, center, rho)
        if idx is not None and m < worst:
            worst, where = m, (k, idx)
    location = _loc(view, *where) if where else {}
    return EstimateRecord("enclosure", "shrinking-sphere barrier", R, worst, worst,
                          bool(worst >= -(slack - 1) * R), slack, location,
                          {"t_star": t_star, "vacuous_snapshots": vacuous, "sup_f": sup_f})
