import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from softreset.controllers import clegg_sector_matrix, make_example1_fore
from softreset.di_core import ControllerSpec, PlantSpec, QuadraticEnergy, interconnect
from softreset.integrate import (
    HybridConfig,
    IntegrationError,
    IntegratorConfig,
    Trajectory,
    dp45_step,
    integrate_hard,
    integrate_soft,
    lyapunov_monitor,
    regularized_field,
    rk4_step,
)
from softreset.plants import tora_plant


def clegg(reset=lambda x, u: np.zeros_like(x)):
    return ControllerSpec(1, 1, lambda x, u: -x + u, reset, lambda x, u: x, M=clegg_sector_matrix(1))


def integrator_plant(a=0.0):
    return PlantSpec(
        n_p=1,
        m_p=1,
        f_p=lambda x, u: a * np.asarray(x, dtype=float) + np.asarray(u, dtype=float),
        h_p=lambda x: np.asarray(x, dtype=float),
        V_p=lambda x: 0.5 * float(x @ x),
        grad_V_p=lambda x: np.asarray(x, dtype=float),
    )


ENERGY = QuadraticEnergy.scalar(0.5, 1)


# -------------------------------------------------------------- one-steppers


def test_rk4_and_dp45_exact_on_linear_decay():
    f = lambda t, x: -x  # noqa: E731
    x = np.array([1.0])
    assert rk4_step(f, 0.0, x, 0.1)[0] == pytest.approx(np.exp(-0.1), rel=1e-7)
    x5, err, k7 = dp45_step(f, 0.0, x, 0.1)
    assert x5[0] == pytest.approx(np.exp(-0.1), rel=1e-9)
    assert abs(err[0]) < 1e-8
    np.testing.assert_allclose(k7, -x5)


def test_rk4_fourth_order_on_smooth_ode():
    f = lambda t, x: np.array([x[1], -x[0]])  # noqa: E731
    errs = []
    for n in (10, 20, 40):
        x, h = np.array([1.0, 0.0]), 1.0 / n
        for k in range(n):
            x = rk4_step(f, k * h, x, h)
        errs.append(abs(x[0] - np.cos(1.0)))
    assert errs[0] / errs[1] == pytest.approx(16.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(16.0, rel=0.05)


def test_regularized_field_interpolates_sign():
    loop = interconnect(integrator_plant(), clegg(), 2.0, energy=ENERGY)
    f = regularized_field(loop, 1e-3)
    # phi = x_p x_c; delta = 1e-3 (1 + |z|^2) is far below |phi| at these points
    x_d = np.array([10.0, 10.0])
    np.testing.assert_allclose(f(0.0, x_d), loop.field(x_d, 1.0))
    x_c = np.array([10.0, -10.0])
    np.testing.assert_allclose(f(0.0, x_c), loop.field(x_c, -1.0))
    x_b = np.array([0.0, 1.0])  # phi = 0 -> s = 0
    np.testing.assert_allclose(f(0.0, x_b), loop.field(x_b, 0.0))


# ----------------------------------------------------------------- config


@pytest.mark.parametrize(
    "kw",
    [
        {"method": "euler"},
        {"boundary_layer": 0.0},
        {"h": 0.0},
        {"t_end": -1.0},
        {"record_stride": 0},
        {"method": "rk4", "h": 0.1, "gamma_max": 10.0},
        {"h_min": 1.0, "h_max": 0.1},
        {"rtol": 0.0},
        {"max_norm": 0.0},
    ],
)
def test_integrator_config_validation(kw):
    with pytest.raises(ValueError):
        IntegratorConfig(**kw)


def test_rk4_step_guard_allows_small_steps():
    IntegratorConfig(method="rk4", h=0.05, gamma_max=10.0)


@pytest.mark.parametrize("kw", [{"max_jumps": 0}, {"jump_dwell": -1.0}, {"event_tol": 0.0}])
def test_hybrid_config_validation(kw):
    with pytest.raises(ValueError):
        HybridConfig(**kw)


# ------------------------------------------------------------ soft resets


@pytest.mark.parametrize("method", ["lsoda", "radau", "rk45", "rk4"])
def test_origin_is_an_equilibrium(method):
    ctrl, energy = make_example1_fore()
    loop = interconnect(tora_plant(), ctrl, 10.0, energy=energy)
    traj = integrate_soft(loop, IntegratorConfig(method=method, t_end=1.0, h=0.01), np.zeros(5))
    assert traj.status == "ok"
    assert np.all(traj.states == 0.0)
    assert traj.times[-1] == pytest.approx(1.0)


def test_soft_matches_linear_flow_inside_c():
    # integrator + Clegg: phi = x_p x_c < 0 along this short arc, so the reset term is off
    loop = interconnect(integrator_plant(), clegg(), 10.0, energy=ENERGY)
    A = np.array([[0.0, 1.0], [-1.0, -1.0]])
    x0 = np.array([1.0, -0.5])
    cfg = IntegratorConfig(method="rk45", t_end=0.2, rtol=1e-11, atol=1e-12)
    traj = integrate_soft(loop, cfg, x0)
    assert np.all(traj.phi < -1e-3)
    for t, x in zip(traj.times, traj.states):
        np.testing.assert_allclose(x, expm(A * t) @ x0, atol=1e-9)


def test_soft_reset_loop_is_dissipative():
    loop = interconnect(integrator_plant(), clegg(), 10.0, energy=ENERGY)
    traj = integrate_soft(loop, IntegratorConfig(t_end=10.0), [1.0, 1.0])
    rep = lyapunov_monitor(traj, tol_rel=1e-6)
    assert not rep.flagged
    assert traj.V[-1] < 1e-2 * traj.V[0]


def test_regularization_converges_as_layer_shrinks():
    loop = interconnect(integrator_plant(), clegg(), 10.0, energy=ENERGY)
    grid = np.linspace(0.0, 3.0, 301)

    def run(delta):
        cfg = IntegratorConfig(t_end=3.0, boundary_layer=delta, rtol=1e-10, atol=1e-12)
        tr = integrate_soft(loop, cfg, [1.0, 1.0])
        return np.column_stack([np.interp(grid, tr.times, tr.states[:, i]) for i in range(2)])

    ref = run(1e-9)
    gaps = [np.max(np.abs(run(d) - ref)) for d in (1e-3, 1e-5, 1e-7)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_blowup_is_reported_not_raised():
    # unstable plant, no resets
    loop = interconnect(integrator_plant(a=2.0), clegg(), None, energy=ENERGY)
    traj = integrate_soft(loop, IntegratorConfig(method="rk45", t_end=50.0, max_norm=1e3), [1.0, 0.0])
    assert traj.status == "blowup"
    assert np.max(np.abs(traj.states[-1])) > 1e3
    assert traj.times[-1] < 50.0


def test_step_underflow_attaches_partial_trajectory():
    loop = interconnect(integrator_plant(), clegg(), 10.0, energy=ENERGY)
    cfg = IntegratorConfig(method="rk45", t_end=1.0, h=0.1, h_min=0.05, h_max=0.1, rtol=1e-14, atol=1e-16)
    with pytest.raises(IntegrationError) as info:
        integrate_soft(loop, cfg, [1.0, 1.0])
    tr = info.value.trajectory
    assert isinstance(tr, Trajectory)
    assert tr.status == "step_underflow"
    assert len(tr) >= 1 and tr.times[0] == 0.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_state_raises():
    plant = PlantSpec(
        1, 1, lambda x, u: np.asarray(x) ** 2, lambda x: np.asarray(x), lambda x: 0.5 * float(x @ x), lambda x: x
    )
    loop = interconnect(plant, clegg(), None, energy=ENERGY)
    cfg = IntegratorConfig(method="rk4", h=0.5, t_end=10.0, max_norm=1e300)
    with pytest.raises(IntegrationError) as info:
        integrate_soft(loop, cfg, [10.0, 0.0])
    assert info.value.trajectory.status == "diverged"


def test_record_stride_thins_samples():
    loop = interconnect(integrator_plant(), clegg(), 10.0, energy=ENERGY)
    dense = integrate_soft(loop, IntegratorConfig(method="rk4", h=0.01, t_end=1.0), [1.0, 1.0])
    thin = integrate_soft(loop, IntegratorConfig(method="rk4", h=0.01, t_end=1.0, record_stride=10), [1.0, 1.0])
    assert len(thin) < len(dense)
    np.testing.assert_allclose(thin.states[-1], dense.states[-1])


def test_initial_state_validation():
    loop = interconnect(integrator_plant(), clegg(), 10.0, energy=ENERGY)
    with pytest.raises(ValueError):
        integrate_soft(loop, IntegratorConfig(), [1.0])
    with pytest.raises(ValueError):
        integrate_soft(loop, IntegratorConfig(), [np.nan, 0.0])


# ------------------------------------------------------------ hard resets


def test_hard_origin_has_no_jumps():
    ctrl, energy = make_example1_fore()
    traj = integrate_hard(tora_plant(), ctrl, IntegratorConfig(t_end=1.0), HybridConfig(), np.zeros(5), energy)
    assert traj.jump_count == 0
    assert np.all(traj.states == 0.0)


def test_hard_clegg_jumps_dissipate_controller_energy():
    traj = integrate_hard(
        integrator_plant(), clegg(), IntegratorConfig(method="rk45", t_end=10.0), HybridConfig(), [1.0, 0.5], ENERGY
    )
    assert traj.jump_count >= 1
    idx = np.flatnonzero(np.diff(traj.times) == 0.0)
    assert idx.size == traj.jump_count
    for i in idx:
        assert traj.V_c[i + 1] <= traj.V_c[i]
        assert traj.x_c[i + 1, 0] == 0.0
        assert traj.phi[i] >= 0.0
    # between jumps the flow stays in the closed flow set up to the event tolerance
    assert not lyapunov_monitor(traj, tol_rel=1e-6).flagged


def test_hard_jump_time_located_by_bisection():
    # x_p' = x_c, x_c' = -x_c - x_p from (1, -0.5): phi = x_p x_c first reaches 0 when x_p does
    hc = HybridConfig(event_tol=1e-12)
    traj = integrate_hard(
        integrator_plant(), clegg(), IntegratorConfig(method="rk45", t_end=5.0, rtol=1e-12, atol=1e-12), hc, [1.0, -0.5]
    )
    A = np.array([[0.0, 1.0], [-1.0, -1.0]])
    t1 = traj.jump_times[0]
    assert t1 > 0.5
    x_pre = expm(A * t1) @ np.array([1.0, -0.5])
    assert abs(x_pre[0]) < 1e-9


def test_zeno_guard_trips():
    # a halving reset never leaves D, so jumps repeat at the same instant
    ctrl = clegg(reset=lambda x, u: 0.5 * np.asarray(x))
    traj = integrate_hard(
        integrator_plant(), ctrl, IntegratorConfig(t_end=1.0), HybridConfig(max_jumps=20), [1.0, 1.0], ENERGY
    )
    assert traj.zeno and traj.status == "zeno"
    assert traj.jump_count == 21


def test_jump_dwell_suppresses_repeats():
    ctrl = clegg(reset=lambda x, u: 0.5 * np.asarray(x))
    traj = integrate_hard(
        integrator_plant(),
        ctrl,
        IntegratorConfig(method="rk45", t_end=1.0),
        HybridConfig(max_jumps=50, jump_dwell=0.1),
        [1.0, 1.0],
        ENERGY,
    )
    assert traj.status == "ok"
    assert np.all(np.diff(traj.jump_times) >= 0.1 - 1e-12)


# ---------------------------------------------------------------- monitor


def _traj(V):
    V = np.asarray(V, dtype=float)
    n = len(V)
    z = np.zeros((n, 1))
    return Trajectory(np.arange(n, dtype=float), np.zeros((n, 2)), 1, z, z, np.zeros(n), V, 0 * V, V)


def test_monitor_empty_raises():
    with pytest.raises(ValueError):
        lyapunov_monitor(_traj([]))


def test_monitor_zero_trajectory():
    rep = lyapunov_monitor(_traj([0.0, 0.0, 0.0]))
    assert rep.max_violation == 0.0 and not rep.flagged


def test_monitor_threshold():
    rep = lyapunov_monitor(_traj([1.0, 0.5, 0.5 + 2e-6]), tol_abs=0.0, tol_rel=1e-6)
    assert rep.max_violation == pytest.approx(2e-6)
    assert rep.flagged
    assert not lyapunov_monitor(_traj([1.0, 0.5, 0.5 + 2e-6]), tol_abs=1e-5).flagged


@settings(max_examples=50)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=30))
def test_monitor_nonincreasing_never_flags(vals):
    V = np.sort(vals)[::-1]
    rep = lyapunov_monitor(_traj(V))
    assert rep.max_violation == 0.0 and not rep.flagged
