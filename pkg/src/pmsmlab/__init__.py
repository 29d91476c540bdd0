"""pmsmlab: observability analysis and sensorless estimation for PMSM drives."""

from pmsmlab.machine import (
    Frame,
    FrameError,
    FrameVec,
    MachineParams,
    MachineState,
    alphabeta,
    dq,
    dynamics_alphabeta,
    dynamics_dq,
    inductance_matrix,
    inductance_matrix_derivs,
    inverse_park,
    park,
    torque_alphabeta,
    torque_dq,
    wrap_angle,
)
from pmsmlab.observability import (
    DegenerateObservabilityVector,
    ModelKind,
    ObservabilityReport,
    det_y1_ipmsm,
    emf_position_speed,
    flux_model_dets,
    hfi_det_y1,
    lie_gradient_stack,
    numeric_rank,
    obs_matrix_y1_ipmsm,
    observability_margin,
    observability_vector,
    sample_report,
    spmsm_det_y1,
    spmsm_det_y2,
    spmsm_det_y3_at_sing,
    spmsm_rank_at_standstill,
    trajectory_reports,
)
from pmsmlab.ekf import EkfState, default_covariances, ekf_step, gain_and_innovate, linearize, make_ekf, predict
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
from pmsmlab.simulation import (
    MachineKind,
    Scenario,
    SpeedProfile,
    TrajectoryLog,
    integrate_electrical,
    run_scenario,
    standstill_study_scenario,
    table_params,
)
from pmsmlab.config import ConfigError, RunConfig, parse_config, render_config
from pmsmlab.report import CSV_COLUMNS, read_csv, summarize, write_csv

__version__ = "0.1.0"
