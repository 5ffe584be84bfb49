import numpy as np
import pytest

from gaussflow.anisotropy import AnisotropyDescriptor as D
from gaussflow.errors import NumericalFailureError, PreconditionError
from gaussflow.flow_solver import FlowConfig, run, stable_dt, step, step_with_info, verify_v_evolution
from gaussflow.graph_geometry import flow_rhs, geometry
from gaussflow.oracles import Polynomial, grid_from_spec, grim_reaper, grim_reaper_solution, manufactured_source

F1 = D.constant(1.0, 2)


def parabola(h=0.1, half=2.0, coeff=0.5, shift=0.0):
    m = int(round(2 * half / h)) + 1
    return grid_from_spec([-half], h, [m], lambda p: shift + coeff * p[..., 0] ** 2)


def grim_grid(k):
    h = np.pi / k
    M = int(round(0.4 * k))
    return grid_from_spec([-M * h], h, [2 * M + 1], lambda p: grim_reaper(p[..., 0], 0.0))


def test_config_validation():
    with pytest.raises(PreconditionError):
        FlowConfig(alpha=0.0, t_end=1.0)
    with pytest.raises(PreconditionError):
        FlowConfig(alpha=1.0, t_end=1.0, snapshot_stride=0)
    with pytest.raises(PreconditionError):
        FlowConfig(alpha=1.0, t_end=1.0, boundary="exact_dirichlet")
    with pytest.raises(PreconditionError):
        FlowConfig(alpha=1.0, t_end=1.0, cfl_safety=1.5)


def test_stable_dt_example():
    assert stable_dt(parabola(0.1), F1, 1.0, 0.2) == pytest.approx(0.002, rel=1e-12)


def test_stable_dt_scales_with_h_squared():
    a = stable_dt(parabola(0.1), F1, 1.0, 0.2)
    b = stable_dt(parabola(0.2), F1, 1.0, 0.2)
    assert b == pytest.approx(4 * a, rel=1e-12)


def test_stable_dt_capped_at_t_end():
    g = parabola(0.1)
    assert stable_dt(g, F1, 1e-3, 0.2, t_end=0.01) == pytest.approx(0.01)


def test_one_grim_reaper_step():
    ref = grim_reaper_solution()
    g = grim_grid(200)
    cfg = FlowConfig(alpha=1.0, t_end=1.0, boundary="exact_dirichlet", reference=ref)
    new, info = step_with_info(g, F1, cfg)
    exact = ref(g.points(), info.dt)
    assert np.max(np.abs(new.u - exact)) < 10 * (info.dt ** 2 + g.spacing ** 2) * info.dt + 1e-14
    assert new.t == pytest.approx(info.dt)


def test_manufactured_quadratic_translation():
    poly = Polynomial.from_terms(1, {(2, 0): 0.5, (0, 1): 1.0})
    src = manufactured_source(poly, F1, 1.0)
    g = parabola(0.1)
    cfg = FlowConfig(alpha=1.0, t_end=0.05, source=src)
    new = step(g, F1, cfg)
    m = g.interior()
    assert np.max(np.abs(new.u[m] - poly(g.points()[m], new.t))) < 1e-10


def test_static_manufactured_solution():
    poly = Polynomial.from_terms(1, {(2, 0): 0.5})
    src = manufactured_source(poly, F1, 1.0)
    g = parabola(0.1)
    tr = run(g, F1, FlowConfig(alpha=1.0, t_end=0.1, source=src))
    assert np.max(np.abs(tr.final.u - g.u)) < 1e-10 * 0.1 + 1e-14


def test_grim_reaper_accuracy():
    ref = grim_reaper_solution()
    g = grim_grid(100)
    tr = run(g, F1, FlowConfig(alpha=1.0, t_end=0.1, boundary="exact_dirichlet", reference=ref))
    assert not tr.failed
    m = tr.final.interior()
    err = np.max(np.abs(tr.final.u[m] - ref(tr.final.points()[m], tr.final.t)))
    assert err < 1e-4
    assert tr.final.t == pytest.approx(0.1, rel=1e-13)


def test_snapshot_times_increase_and_stride():
    tr = run(parabola(0.1), F1, FlowConfig(alpha=1.0, t_end=0.05, snapshot_stride=3))
    t = tr.times
    assert np.all(np.diff(t) > 0)
    assert len(tr.snapshots) == len(tr.diagnostics) // 3 + 1 + (len(tr.diagnostics) % 3 != 0)


@pytest.mark.parametrize("desc", [F1, D.ellipsoid([1.0, 2.0]), D.shifted_sphere([0.2, -0.3])])
def test_monotone_in_time(desc):
    tr = run(parabola(0.1), desc, FlowConfig(alpha=1.0, t_end=0.05, snapshot_stride=1))
    for a, b in zip(tr.snapshots, tr.snapshots[1:]):
        assert np.all(b.u >= a.u)


def test_discrete_comparison():
    cfg = FlowConfig(alpha=1.0, t_end=0.05, fixed_dt=2e-4)
    lo = run(parabola(0.1), F1, cfg)
    hi = run(grid_from_spec([-2.0], 0.1, [41], lambda p: 0.05 + 0.55 * p[..., 0] ** 2), F1, cfg)
    for a, b in zip(lo.snapshots, hi.snapshots):
        assert np.all(a.u <= b.u)


def test_constant_anisotropy_time_scaling():
    c, dt = 2.5, 4e-4
    fast = run(parabola(0.1), D.constant(c, 2), FlowConfig(alpha=1.0, t_end=0.02, fixed_dt=dt))
    slow = run(parabola(0.1), F1, FlowConfig(alpha=1.0, t_end=0.02 * c, fixed_dt=dt * c))
    assert len(fast.snapshots) == len(slow.snapshots)
    for a, b in zip(fast.snapshots, slow.snapshots):
        assert np.max(np.abs(a.u - b.u)) < 1e-10


def test_ellipsoid_half_alpha_health():
    g = grid_from_spec([-2.0, -2.0], 0.1, [41, 41], lambda p: 0.5 * np.sum(p ** 2, axis=-1))
    tr = run(g, D.ellipsoid([1.0, 1.0, 2.0]), FlowConfig(alpha=0.5, t_end=0.05, height_cap=2.0))
    assert not tr.failed


def test_height_cap_deactivates_cells():
    g = parabola(0.1)
    tr = run(g, F1, FlowConfig(alpha=1.0, t_end=0.2, height_cap=1.0))
    assert not tr.failed
    assert tr.snapshots[0].active.sum() > 0
    assert np.all(tr.final.u[tr.final.active] < 1.0)
    assert tr.final.active.sum() < g.active.sum()


def test_convexity_failure_recorded():
    cfg = FlowConfig(alpha=1.0, t_end=1.0, fixed_dt=5.0, max_retries=0)
    g = grid_from_spec([-2.0], 0.1, [41], lambda p: 0.5 * p[..., 0] ** 2 + 0.2 * p[..., 0] ** 4)
    tr = run(g, F1, cfg)
    assert tr.failed and tr.failure_t == 0.0
    assert len(tr.snapshots) == 1


def test_retries_recover():
    cfg = FlowConfig(alpha=1.0, t_end=0.5, fixed_dt=0.5, max_retries=20)
    g = grid_from_spec([-2.0], 0.1, [41], lambda p: 0.5 * p[..., 0] ** 2 + 0.2 * p[..., 0] ** 4)
    new, info = step_with_info(g, F1, cfg)
    assert info.retries > 0
    geometry(new)


def test_step_needs_interior():
    g = grid_from_spec([0.0], 0.1, [2], lambda p: p[..., 0] ** 2)
    with pytest.raises(NumericalFailureError):
        step(g, F1, FlowConfig(alpha=1.0, t_end=1.0))


def test_dimension_mismatch():
    with pytest.raises(PreconditionError):
        run(parabola(), D.constant(1.0, 3), FlowConfig(alpha=1.0, t_end=0.1))


def test_deterministic():
    cfg = FlowConfig(alpha=0.5, t_end=0.02)
    a = run(parabola(0.1), D.ellipsoid([1.0, 2.0]), cfg)
    b = run(parabola(0.1), D.ellipsoid([1.0, 2.0]), cfg)
    for x, y in zip(a.snapshots, b.snapshots):
        assert np.array_equal(x.u, y.u) and x.t == y.t


def test_flow_rhs_matches_grim_identity():
    x = np.linspace(-1.2, 1.2, 11)
    Du = np.tan(x)[:, None]
    D2u = (1 / np.cos(x) ** 2)[:, None, None]
    np.testing.assert_allclose(flow_rhs(Du, D2u, F1, 1.0), 1.0, atol=1e-12)


def test_v_evolution_converges_on_grim_reaper():
    ref = grim_reaper_solution()
    res = []
    for k in (100, 200):
        tr = run(grim_grid(k), F1, FlowConfig(alpha=1.0, t_end=0.005, boundary="exact_dirichlet",
                                              reference=ref, snapshot_stride=1))
        out = verify_v_evolution(tr)
        assert not out.coarse_time_spacing
        res.append(out.max_residual)
    assert res[1] < res[0] / 2 ** 1.0


def test_v_evolution_quadratic_single_step():
    # away from the frozen rim the residual is the O(h^2 + dt) truncation of the scheme
    g = parabola(0.05, half=1.0)
    tr = run(g, F1, FlowConfig(alpha=1.0, t_end=3 * stable_dt(g, F1, 1.0), snapshot_stride=1))
    out = verify_v_evolution(tr, k=1)
    h, dt = g.spacing, tr.diagnostics[0].dt
    inner = out.residual[3:-3]
    assert np.all(np.isfinite(inner))
    assert np.max(np.abs(inner)) < 5 * (h * h + dt)


def test_v_evolution_needs_neighbours():
    tr = run(parabola(), F1, FlowConfig(alpha=1.0, t_end=0.01, snapshot_stride=1))
    with pytest.raises(PreconditionError):
        verify_v_evolution(tr, k=0)


def test_v_evolution_flags_coarse_spacing():
    tr = run(parabola(0.1), F1, FlowConfig(alpha=1.0, t_end=0.2, snapshot_stride=20))
    assert verify_v_evolution(tr, k=1).coarse_time_spacing
