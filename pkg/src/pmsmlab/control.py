"""Rotor-frame current control and test-signal injection.

A pair of PI loops regulates the dq currents; the commanded voltage is
rotated back to the stationary frame with the true rotor angle.  Injection
is either a sinusoidal perturbation added to the q-axis current reference
or a voltage carrier applied on the estimated d-axis.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

from pmsmlab.machine import FrameVec, MachineParams, dq, inverse_park


class InjectionKind(enum.Enum):
    NONE = "none"
    CURRENT_ON_Q = "current_on_q"
    VOLTAGE_ON_DHAT = "voltage_on_dhat"


@dataclass(frozen=True)
class InjectionSchedule:
    """Test signal description. Active on [t_start, t_end), closed-open."""

    kind: InjectionKind = InjectionKind.NONE
    amplitude: float = 0.0
    frequency: float = 0.0  # rad/s
    t_start: float = 0.0
    t_end: float = 0.0

    def __post_init__(self) -> None:
        if self.kind is not InjectionKind.NONE:
            if not self.t_start < self.t_end:
                raise ValueError("active schedule needs t_start < t_end")
            if self.amplitude < 0.0:
                raise ValueError("amplitude must be non-negative")

    def active(self, t: float) -> bool:
        return self.kind is not InjectionKind.NONE and self.t_start <= t < self.t_end

    def carrier(self, t: float) -> float:
        if not self.active(t):
            return 0.0
        if self.kind is InjectionKind.CURRENT_ON_Q:
            return self.amplitude * math.sin(self.frequency * t)
        return self.amplitude * math.cos(self.frequency * t)


def current_reference(t: float, schedule: InjectionSchedule, base: tuple[float, float]) -> tuple[float, float]:
    """dq current setpoints at time t, with any active current injection added."""
    i_d_ref, i_q_ref = base
    if schedule.kind is InjectionKind.CURRENT_ON_Q and schedule.active(t):
        i_q_ref = i_q_ref + schedule.carrier(t)
    return i_d_ref, i_q_ref


@dataclass(frozen=True)
class PiState:
    """PI regulator gains and integrator. limit clamps both integrator and output."""

    kp: float
    ki: float
    integrator: float = 0.0
    limit: float = math.inf

    def __post_init__(self) -> None:
        if self.kp < 0.0 or self.ki < 0.0:
            raise ValueError("gains must be non-negative")
        if self.limit <= 0.0:
            raise ValueError("limit must be positive")


def pi_step(pi: PiState, error: float, T_s: float) -> tuple[float, PiState]:
    """One sample of the PI law; returns (saturated output, advanced state)."""
    out = pi.kp * error + pi.integrator
    out = min(max(out, -pi.limit), pi.limit)
    integ = pi.integrator + pi.ki * error * T_s
    integ = min(max(integ, -pi.limit), pi.limit)  # anti-windup
    return out, replace(pi, integrator=integ)


def default_gains(params: MachineParams, bandwidth: float = 2.0 * math.pi * 500.0,
                  limit: float = 50.0) -> tuple[PiState, PiState]:
    """Per-axis PI gains from the loop-shaping rule kp = L w_c, ki = R w_c."""
    return (
        PiState(kp=params.Ld * bandwidth, ki=params.R * bandwidth, limit=limit),
        PiState(kp=params.Lq * bandwidth, ki=params.R * bandwidth, limit=limit),
    )


@dataclass(frozen=True)
class ControllerState:
    pi_d: PiState
    pi_q: PiState


def controller_step(
    ctrl: ControllerState,
    i_dq_meas: FrameVec,
    refs: tuple[float, float],
    theta: float,
    T_s: float,
    t: float = 0.0,
    schedule: InjectionSchedule | None = None,
    theta_hat: float | None = None,
) -> tuple[FrameVec, ControllerState]:
    """Close both current loops and rotate the command to the stationary frame.

    theta is the angle used for the output rotation (the true rotor angle in
    plant simulation).  A voltage-on-d-axis schedule adds its carrier along
    the estimated rotor direction theta_hat.
    """
    v_d, pi_d = pi_step(ctrl.pi_d, refs[0] - i_dq_meas.x, T_s)
    v_q, pi_q = pi_step(ctrl.pi_q, refs[1] - i_dq_meas.y, T_s)
    v_ab = inverse_park(dq(v_d, v_q), theta)
    if schedule is not None and schedule.kind is InjectionKind.VOLTAGE_ON_DHAT and schedule.active(t):
        if theta_hat is None:
            raise ValueError("voltage injection on the estimated axis needs theta_hat")
        carrier = schedule.carrier(t)
        v_ab = FrameVec(
            v_ab.x + carrier * math.cos(theta_hat),
            v_ab.y + carrier * math.sin(theta_hat),
            v_ab.frame,
        )
    return v_ab, ControllerState(pi_d=pi_d, pi_q=pi_q)
