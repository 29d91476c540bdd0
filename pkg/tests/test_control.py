"""Injection scheduling, PI loops, and the closed current-control loop."""

import math

import numpy as np
import pytest

from pmsmlab.control import (
    ControllerState,
    InjectionKind,
    InjectionSchedule,
    PiState,
    controller_step,
    current_reference,
    default_gains,
    pi_step,
)
from pmsmlab.machine import (
    MachineParams,
    MachineState,
    alphabeta,
    dq,
    dynamics_alphabeta,
    park,
)

T_S = 1e-4


def _spmsm():
    return MachineParams(R=0.01, L0=0.65e-3, L2=0.0, psi_r=0.0225, p=2, J=0.01)


# ---------------------------------------------------------------------------
# injection schedule
# ---------------------------------------------------------------------------


def test_schedule_validation():
    InjectionSchedule()  # inactive default needs no window
    with pytest.raises(ValueError, match="t_start < t_end"):
        InjectionSchedule(InjectionKind.CURRENT_ON_Q, 0.5, 100.0, 0.5, 0.5)
    with pytest.raises(ValueError, match="non-negative"):
        InjectionSchedule(InjectionKind.CURRENT_ON_Q, -0.5, 100.0, 0.0, 1.0)


def test_schedule_window_is_closed_open():
    sch = InjectionSchedule(InjectionKind.CURRENT_ON_Q, 0.5, 100.0, 0.2, 0.5)
    assert not sch.active(0.199999)
    assert sch.active(0.2)
    assert sch.active(0.499999)
    assert not sch.active(0.5)
    assert not InjectionSchedule().active(0.3)


def test_carrier_shapes():
    cur = InjectionSchedule(InjectionKind.CURRENT_ON_Q, 2.0, 300.0, 0.0, 1.0)
    vol = InjectionSchedule(InjectionKind.VOLTAGE_ON_DHAT, 2.0, 300.0, 0.0, 1.0)
    t = 0.013
    assert cur.carrier(t) == pytest.approx(2.0 * math.sin(300.0 * t), rel=1e-15)
    assert vol.carrier(t) == pytest.approx(2.0 * math.cos(300.0 * t), rel=1e-15)
    assert cur.carrier(2.0) == 0.0  # outside the window


def test_current_reference_injection():
    sch = InjectionSchedule(InjectionKind.CURRENT_ON_Q, 0.5, 200.0, 0.1, 0.4)
    assert current_reference(0.0, sch, (1.0, 2.0)) == (1.0, 2.0)
    i_d, i_q = current_reference(0.2, sch, (1.0, 2.0))
    assert i_d == 1.0
    assert i_q == pytest.approx(2.0 + 0.5 * math.sin(200.0 * 0.2), rel=1e-15)
    vol = InjectionSchedule(InjectionKind.VOLTAGE_ON_DHAT, 0.5, 200.0, 0.1, 0.4)
    assert current_reference(0.2, vol, (1.0, 2.0)) == (1.0, 2.0)


# ---------------------------------------------------------------------------
# PI regulator
# ---------------------------------------------------------------------------


def test_pi_validation():
    with pytest.raises(ValueError, match="gains"):
        PiState(kp=-1.0, ki=0.0)
    with pytest.raises(ValueError, match="limit"):
        PiState(kp=1.0, ki=1.0, limit=0.0)


def test_pi_step_law():
    pi = PiState(kp=2.0, ki=10.0, integrator=0.5)
    out, nxt = pi_step(pi, 3.0, 0.01)
    assert out == pytest.approx(2.0 * 3.0 + 0.5)
    assert nxt.integrator == pytest.approx(0.5 + 10.0 * 3.0 * 0.01)
    assert nxt.kp == pi.kp and nxt.ki == pi.ki


def test_pi_anti_windup():
    pi = PiState(kp=1.0, ki=100.0, limit=2.0)
    for _ in range(50):
        out, pi = pi_step(pi, 10.0, 0.01)
        assert abs(out) <= 2.0
        assert abs(pi.integrator) <= 2.0
    # integrator pinned at the limit, not wound far beyond it
    assert pi.integrator == 2.0
    out, pi = pi_step(pi, -1.0, 0.01)
    assert out == pytest.approx(1.0)  # recovers immediately


def test_default_gains_rule():
    p = MachineParams.from_dq(R=0.01, Ld=0.5e-3, Lq=0.8e-3, psi_r=0.0225, p=2, J=0.01)
    g_d, g_q = default_gains(p, bandwidth=1000.0, limit=42.0)
    assert g_d.kp == pytest.approx(0.5e-3 * 1000.0)
    assert g_q.kp == pytest.approx(0.8e-3 * 1000.0)
    assert g_d.ki == g_q.ki == pytest.approx(0.01 * 1000.0)
    assert g_d.limit == g_q.limit == 42.0


# ---------------------------------------------------------------------------
# closed loop
# ---------------------------------------------------------------------------


def _controller(params, bandwidth=2.0 * math.pi * 500.0):
    pi_d, pi_q = default_gains(params, bandwidth=bandwidth)
    return ControllerState(pi_d=pi_d, pi_q=pi_q)


def test_controller_zero_error_zero_command():
    p = _spmsm()
    v, _ = controller_step(_controller(p), dq(1.0, 2.0), (1.0, 2.0), 0.7, T_S)
    assert v.x == 0.0 and v.y == 0.0


def test_controller_voltage_injection_term():
    p = _spmsm()
    sch = InjectionSchedule(InjectionKind.VOLTAGE_ON_DHAT, 2.0, 500.0, 0.0, 1.0)
    t, th_hat = 0.003, 0.9
    base, _ = controller_step(_controller(p), dq(1.0, 2.0), (1.0, 2.0), 0.7, T_S)
    v, _ = controller_step(
        _controller(p), dq(1.0, 2.0), (1.0, 2.0), 0.7, T_S,
        t=t, schedule=sch, theta_hat=th_hat,
    )
    carrier = 2.0 * math.cos(500.0 * t)
    assert v.x - base.x == pytest.approx(carrier * math.cos(th_hat), rel=1e-14)
    assert v.y - base.y == pytest.approx(carrier * math.sin(th_hat), rel=1e-14)
    with pytest.raises(ValueError, match="theta_hat"):
        controller_step(
            _controller(p), dq(1.0, 2.0), (1.0, 2.0), 0.7, T_S, t=t, schedule=sch
        )
    # outside the window the schedule is a no-op and needs no estimate
    v2, _ = controller_step(
        _controller(p), dq(1.0, 2.0), (1.0, 2.0), 0.7, T_S, t=5.0, schedule=sch
    )
    assert v2.x == base.x and v2.y == base.y


def _run_loop(params, theta, refs, n, substeps=10, omega=0.0):
    """Regulate the real machine at a frozen rotor angle for n samples."""
    from pmsmlab.simulation import integrate_electrical, SpeedProfile

    profile = SpeedProfile.from_breakpoints([(0.0, omega)])
    state = MachineState(0.0, 0.0, omega, theta)
    ctrl = _controller(params)
    log = []
    for k in range(n):
        i_dq = park(state.currents, state.theta)
        log.append((i_dq.x, i_dq.y))
        v, ctrl = controller_step(ctrl, i_dq, refs, state.theta, T_S)
        for j in range(substeps):
            state = integrate_electrical(
                state, v, profile, k * T_S + j * T_S / substeps, T_S / substeps, params
            )
    return np.array(log), state


def test_loop_step_response_settles_fast():
    p = _spmsm()
    hist, _ = _run_loop(p, 0.7, (3.0, 0.0), 200)
    i_d = hist[:, 0]
    # bandwidth 2*pi*500 -> settling within a couple of ms
    assert np.all(np.abs(i_d[50:] - 3.0) < 0.02)
    assert abs(i_d[-1] - 3.0) < 1e-3


def test_loop_axes_are_decoupled_at_standstill():
    p = _spmsm()
    hist, _ = _run_loop(p, 0.7, (3.0, 0.0), 200)
    # a d-axis step must not excite the q axis at standstill
    assert np.max(np.abs(hist[:, 1])) < 1e-9


def test_loop_tracks_at_constant_speed():
    p = MachineParams.from_dq(R=0.01, Ld=0.5e-3, Lq=0.8e-3, psi_r=0.0225, p=2, J=0.01)
    # 0.6 s horizon: the R*w_c integral gain rejects the back-EMF disturbance
    # with the plant time constant L/R = 65 ms, so allow ~9 constants
    hist, _ = _run_loop(p, 0.2, (0.0, 15.0), 6000, substeps=2, omega=20.0)
    assert abs(hist[-1, 0]) < 0.01
    assert abs(hist[-1, 1] - 15.0) / 15.0 < 1e-3
