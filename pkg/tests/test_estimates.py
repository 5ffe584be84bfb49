import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaussflow.anisotropy import AnisotropyDescriptor as D
from gaussflow.errors import DegenerateWindowError, ExtinctError, HypothesisViolationError, NotEnclosedError
from gaussflow.estimates import (
    barrier_radius,
    curvature_constant_C1,
    curvature_lower_bound_check,
    enclosure_check,
    extinction_time,
    gradient_bound,
    gradient_bound_check,
    speed_bound,
    speed_bound_check,
    theta_lambda,
)
from gaussflow.flow_solver import FlowConfig, FlowTrace, run
from gaussflow.oracles import grid_from_spec, grim_reaper, grim_reaper_solution, sphere_cap_initial

F1 = D.constant(1.0, 2)


@pytest.fixture(scope="module")
def grim_trace():
    h = np.pi / 100
    g = grid_from_spec([-40 * h], h, [81], lambda p: grim_reaper(p[..., 0], 0.0))
    return run(g, F1, FlowConfig(alpha=1.0, t_end=0.1, boundary="exact_dirichlet",
                                 reference=grim_reaper_solution(), snapshot_stride=5))


def static_trace(grid, desc=F1, alpha=1.0):
    return FlowTrace(desc, FlowConfig(alpha=alpha, t_end=1.0), [grid])


def test_gradient_bound_example():
    assert gradient_bound(2, 1, 2, 1, 1.0, 3.0) == 6.0


def test_c1_example():
    assert curvature_constant_C1(1, 1, 1, 1, 1.0, 0.0) == pytest.approx(3.0, abs=1e-15)


def test_speed_bound_example():
    assert speed_bound(2.0, 1.0, 1, 1, 1, 1.0, 1.0) == pytest.approx(232.0, abs=1e-12)


def test_barrier_examples():
    assert barrier_radius(1.0, 0.0, 1, 1, 1.0) == 1.0
    assert barrier_radius(1.0, 3 / 16, 1, 1, 2.0) == 0.5
    assert extinction_time(1.0, 1, 1, 1.0) == 0.5
    with pytest.raises(ExtinctError) as info:
        barrier_radius(1.0, 0.6, 1, 1, 1.0)
    assert info.value.t_star == 0.5


@given(t=st.floats(0.0, 0.45), R=st.floats(0.5, 2.0), alpha=st.sampled_from([0.5, 1.0, 2.0]),
       n=st.sampled_from([1, 2]), sup_f=st.floats(0.5, 2.0))
@settings(max_examples=60, deadline=None)
def test_barrier_ode(t, R, alpha, n, sup_f):
    t = t * extinction_time(R, n, alpha, sup_f)
    rho = barrier_radius(R, t, n, alpha, sup_f)
    drho = -sup_f * rho ** (-n * alpha)
    eps = 1e-7 * extinction_time(R, n, alpha, sup_f)
    fd = (barrier_radius(R, t + eps, n, alpha, sup_f) - barrier_radius(R, t - eps, n, alpha, sup_f)) / (2 * eps) \
        if t > eps else (barrier_radius(R, t + eps, n, alpha, sup_f) - rho) / eps
    assert fd == pytest.approx(drho, rel=1e-4)


@given(N=st.floats(1.0, 5.0), dN=st.floats(0.0, 3.0), n=st.sampled_from([1, 2]),
       alpha=st.sampled_from([0.5, 1.0, 2.0]))
@settings(max_examples=50, deadline=None)
def test_bounds_monotone_in_N(N, dN, n, alpha):
    assert gradient_bound(N + dN, 1.0, n, alpha, 1.2, 2.0) >= gradient_bound(N, 1.0, n, alpha, 1.2, 2.0)
    assert speed_bound(2.0, 1.5, N + dN, n, alpha, 1.2, 0.8) >= speed_bound(2.0, 1.5, N, n, alpha, 1.2, 0.8)
    ratio = curvature_constant_C1(2 * N, n, alpha, 1.0, 1.0, 0.3) / curvature_constant_C1(N, n, alpha, 1.0, 1.0, 0.3)
    assert ratio >= 2 ** ((n + alpha) / alpha) * (1 - 1e-12)


def test_hypothesis_violation(grim_trace):
    with pytest.raises(HypothesisViolationError):
        gradient_bound_check(grim_trace, 0.5, 1.0)
    with pytest.raises(HypothesisViolationError):
        curvature_lower_bound_check(grim_trace, 1.0, 0.0)


def test_grim_reaper_checks_pass(grim_trace):
    g = gradient_bound_check(grim_trace, 1.0, 1.0)
    c = curvature_lower_bound_check(grim_trace, 1.0, 1.0)
    s = speed_bound_check(grim_trace, 1.0)
    assert g.passed and g.margin >= 0
    assert c.passed and c.margin >= -0.05 * c.bound
    assert s.passed and s.margin >= 0
    assert s.notes["sublevel_condition"] == "sample"
    assert set(g.location) == {"t", "snapshot", "cell"}


def test_flat_data_gradient():
    g = grid_from_spec([-1.0], 0.1, [21], lambda p: 1e-6 * p[..., 0] ** 2)
    rec = gradient_bound_check(static_trace(g), 2.0, 1.0)
    assert rec.observed <= 2.0 and rec.bound >= 2.0 and rec.margin >= 0


def test_curvature_initial_floor():
    g = grid_from_spec([-1.5], 0.05, [61], lambda p: -np.log(np.cos(p[..., 0])))
    rec = curvature_lower_bound_check(static_trace(g), 1.0, 1.0)
    assert rec.margin >= 0


def test_curvature_floor_example():
    # inf lambda_min = 0.5 on the window, C1 = 3: floor is 1/3
    h = 0.02
    g = grid_from_spec([-1.0], h, [101], lambda p: 0.5 * (0.5 * p[..., 0] ** 2))
    rec = curvature_lower_bound_check(static_trace(g), 1.0, 1.0)
    assert rec.notes["C1"] == pytest.approx(3.0)
    assert rec.bound == pytest.approx(1 / 3, abs=1e-12)


def test_theta_lambda_paraboloid():
    h = 0.01
    g = grid_from_spec([-1.5], h, [301], lambda p: 0.5 * p[..., 0] ** 2)
    theta, lam = theta_lambda(static_trace(g), 0.5, 0.0)
    x = g.points()[..., 0]
    edge = np.max(np.abs(x[(g.u < 0.5) & g.interior()]))
    assert theta == pytest.approx(1 + edge ** 2, abs=1e-12)
    assert theta <= 2 and theta >= 1
    assert lam == pytest.approx((1 + edge ** 2) ** 1.5, abs=1e-9)
    assert lam == pytest.approx(2 ** 1.5, rel=0.05)


def test_theta_lambda_empty_window():
    g = grid_from_spec([-1.0], 0.1, [21], lambda p: 5 + p[..., 0] ** 2)
    with pytest.raises(DegenerateWindowError):
        theta_lambda(static_trace(g), 1.0, 0.0)


def test_speed_zero_at_initial_time():
    g = grid_from_spec([-1.0], 0.1, [21], lambda p: 0.5 * p[..., 0] ** 2)
    rec = speed_bound_check(static_trace(g), 1.0)
    assert rec.observed == 0.0 and rec.margin == rec.bound


def test_condition_interpretations_reported(grim_trace):
    a = speed_bound_check(grim_trace, 1.0, condition_at="sample")
    b = speed_bound_check(grim_trace, 1.0, condition_at="final")
    assert a.notes["alternate_condition_margin"] == pytest.approx(b.margin)


@pytest.fixture(scope="module")
def cap_trace():
    g = sphere_cap_initial(1.0, [0.0, 1.0], [-3.0], 0.05, [121], height_cap=4.0)
    return run(g, F1, FlowConfig(alpha=1.0, t_end=0.55, snapshot_stride=20))


def test_enclosure_sphere_cap(cap_trace):
    rec = enclosure_check(cap_trace, [0.0, 1.0], 1.0)
    assert rec.passed and rec.observed >= -0.05
    assert rec.notes["vacuous_snapshots"] >= 1


def test_enclosure_at_time_zero_is_exact(cap_trace):
    first = FlowTrace(F1, cap_trace.config, cap_trace.snapshots[:1])
    rec = enclosure_check(first, [0.0, 1.0], 1.0)
    assert rec.observed == 0.0


def test_enclosure_precondition(cap_trace):
    with pytest.raises(NotEnclosedError):
        enclosure_check(cap_trace, [0.0, 0.5], 1.0)
