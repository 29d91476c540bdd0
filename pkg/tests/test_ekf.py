"""Filter construction, linearization, and the predict/correct invariants."""

import math

import numpy as np
import pytest

from pmsmlab.ekf import (
    C_OUT,
    EkfState,
    default_covariances,
    ekf_step,
    gain_and_innovate,
    linearize,
    make_ekf,
    predict,
)
from pmsmlab.machine import MachineState, alphabeta, dynamics_alphabeta

T_S = 1e-4


def _rate(params, x, u):
    # reference model rate through the public dynamics, zero load torque
    st = MachineState(x[0], x[1], x[2], x[3])
    di, dom, dth = dynamics_alphabeta(st, alphabeta(u[0], u[1]), params)
    return np.array([di[0], di[1], dom, dth])


# ---------------------------------------------------------------------------
# construction and validation
# ---------------------------------------------------------------------------


def test_default_covariances():
    q, r = default_covariances()
    assert np.array_equal(q, np.diag([1.0, 1.0, 1e3, 0.1]))
    assert np.array_equal(r, np.eye(2))


def test_state_shape_validation():
    q, r = default_covariances()
    with pytest.raises(ValueError):
        EkfState(np.zeros(3), np.eye(4), q, r, T_S)
    with pytest.raises(ValueError):
        EkfState(np.zeros(4), np.eye(3), q, r, T_S)
    with pytest.raises(ValueError):
        EkfState(np.zeros(4), np.eye(4), np.eye(3), r, T_S)
    with pytest.raises(ValueError):
        EkfState(np.zeros(4), np.eye(4), q, np.eye(3), T_S)
    with pytest.raises(ValueError):
        EkfState(np.zeros(4), np.eye(4), q, r, 0.0)


def test_make_ekf_validates_and_copies():
    p0 = np.eye(4)
    p0[0, 1] = 0.5
    with pytest.raises(ValueError, match="symmetric"):
        make_ekf(np.zeros(4), T_S, P0=p0)
    with pytest.raises(np.linalg.LinAlgError):
        make_ekf(np.zeros(4), T_S, R_meas=np.diag([1.0, -1.0]))
    x0 = np.zeros(4)
    src = np.eye(4)
    ekf = make_ekf(x0, T_S, P0=src)
    src[0, 0] = 99.0
    x0[0] = 99.0
    assert ekf.P[0, 0] == 1.0 and ekf.x_hat[0] == 0.0


# ---------------------------------------------------------------------------
# linearization
# ---------------------------------------------------------------------------


def test_linearize_output_matrix(ip_params):
    _, C = linearize(ip_params, np.zeros(4), (0.0, 0.0))
    assert np.array_equal(C, C_OUT)


@pytest.mark.parametrize("machine", ["ip", "sp"])
def test_linearize_matches_finite_difference(machine, ip_params, sp_params):
    params = ip_params if machine == "ip" else sp_params
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(20):
        x = np.array(
            [
                rng.uniform(-20, 20),
                rng.uniform(-20, 20),
                rng.uniform(-80, 80),
                rng.uniform(-math.pi, math.pi),
            ]
        )
        u = rng.uniform(-30, 30, 2)
        A, _ = linearize(params, x, u)
        fd = np.empty((4, 4))
        for i in range(4):
            h = 1e-6 * max(1.0, abs(x[i]))
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            fd[:, i] = (_rate(params, xp, u) - _rate(params, xm, u)) / (2.0 * h)
        scale = max(1.0, np.max(np.abs(A)))
        worst = max(worst, np.max(np.abs(A - fd)) / scale)
    assert worst < 1e-5


def test_linearize_standstill_position_blindness(sp_params):
    # non-salient, zero speed, zero current: position column vanishes
    A, _ = linearize(sp_params, np.array([0.0, 0.0, 0.0, 1.2]), (3.0, -4.0))
    assert not A[:, 3].any()


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------


def test_predict_euler_forms(ip_params):
    x0 = np.array([2.0, -1.0, 30.0, 0.5])
    u = (4.0, -2.0)
    ekf = make_ekf(x0, T_S)
    out = predict(ekf, ip_params, u)
    A, _ = linearize(ip_params, x0, u)
    p_ref = np.eye(4) + T_S * (A + A.T) + ekf.Q
    assert np.allclose(out.x_hat, x0 + T_S * _rate(ip_params, x0, u), rtol=1e-12)
    assert np.allclose(out.P, 0.5 * (p_ref + p_ref.T), rtol=1e-12)
    assert np.array_equal(out.P, out.P.T)


def test_predict_fixed_point(ip_params):
    # zero state, zero input, zero covariance and noise: nothing moves
    ekf = make_ekf(np.array([0.0, 0.0, 0.0, 0.4]), T_S, Q=np.zeros((4, 4)), P0=np.zeros((4, 4)))
    out = predict(ekf, ip_params, (0.0, 0.0))
    assert np.array_equal(out.x_hat, ekf.x_hat)
    assert np.array_equal(out.P, np.zeros((4, 4)))


def test_predict_rejects_non_finite_dynamics(ip_params):
    # currents large enough that the torque products overflow
    ekf = make_ekf(np.array([1e300, 0.0, 0.0, 0.0]), T_S)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(FloatingPointError, match="non-finite"):
            predict(ekf, ip_params, (0.0, 0.0))


# ---------------------------------------------------------------------------
# measurement update
# ---------------------------------------------------------------------------


def test_innovate_consistent_measurement_keeps_state():
    ekf = make_ekf(np.array([1.0, -2.0, 10.0, 0.3]), T_S)
    out = gain_and_innovate(ekf, (1.0, -2.0))
    assert np.array_equal(out.x_hat, ekf.x_hat)
    # covariance still shrinks on the measured channels
    assert out.P[0, 0] < ekf.P[0, 0] and out.P[1, 1] < ekf.P[1, 1]


def test_innovate_zero_covariance_ignores_measurement():
    ekf = make_ekf(np.array([1.0, -2.0, 10.0, 0.3]), T_S, P0=np.zeros((4, 4)))
    out = gain_and_innovate(ekf, (50.0, 50.0))
    assert np.array_equal(out.x_hat, ekf.x_hat)
    assert np.array_equal(out.P, np.zeros((4, 4)))


def test_innovate_never_increases_trace():
    rng = np.random.default_rng(5)
    for _ in range(100):
        m = rng.standard_normal((4, 4))
        p0 = m @ m.T + 1e-6 * np.eye(4)
        ekf = make_ekf(rng.standard_normal(4), T_S, P0=p0)
        out = gain_and_innovate(ekf, rng.standard_normal(2))
        assert np.trace(out.P) <= np.trace(ekf.P) + 1e-12
        assert np.array_equal(out.P, out.P.T)


# ---------------------------------------------------------------------------
# closed-loop filter behaviour
# ---------------------------------------------------------------------------


def test_perfect_model_tracking(ip_params):
    # truth propagated by the same Euler model, zero Q and zero P0: the filter
    # reproduces the trajectory without correction
    x_true = np.array([1.0, 0.5, 20.0, 0.1])
    ekf = make_ekf(x_true, T_S, Q=np.zeros((4, 4)), P0=np.zeros((4, 4)))
    worst = 0.0
    for k in range(1000):
        t = k * T_S
        u = (5.0 * math.sin(50.0 * t), 5.0 * math.cos(70.0 * t))
        x_true = x_true + T_S * _rate(ip_params, x_true, u)
        ekf = ekf_step(ekf, ip_params, u, x_true[:2])
        worst = max(worst, float(np.max(np.abs(ekf.x_hat - x_true))))
    assert worst < 1e-9


def test_long_run_covariance_hygiene(ip_params):
    # noisy measurements and a wandering input for 1e5 steps: the covariance
    # must stay exactly symmetric with non-negative diagonal throughout
    rng = np.random.default_rng(123)
    ekf = make_ekf(np.array([0.0, 0.0, 0.0, 0.0]), T_S)
    for _ in range(100_000):
        u = rng.uniform(-2.0, 2.0, 2)
        y = ekf.x_hat[:2] + 0.1 * rng.standard_normal(2)
        ekf = ekf_step(ekf, ip_params, u, y)
        assert np.array_equal(ekf.P, ekf.P.T)
        assert np.min(np.diag(ekf.P)) >= 0.0
    assert np.all(np.isfinite(ekf.P))


def test_steps_are_deterministic(ip_params):
    def run():
        ekf = make_ekf(np.array([0.5, -0.5, 5.0, 0.2]), T_S)
        rng = np.random.default_rng(99)
        for _ in range(100):
            u = rng.uniform(-3.0, 3.0, 2)
            y = rng.uniform(-1.0, 1.0, 2)
            ekf = ekf_step(ekf, ip_params, u, y)
        return ekf

    a, b = run(), run()
    assert np.array_equal(a.x_hat, b.x_hat)
    assert np.array_equal(a.P, b.P)
