"""Shared fixtures.

The two study logs are expensive (about 3 s each), so they are built once
per session and shared by the end-to-end, report, and acceptance tests.
Oracle tests use J=0.01 machines: the finite-difference samplers were tuned
against that inertia, and the det_y3 bracket root sits outside the sampled
current range there.
"""

import pytest

from pmsmlab.machine import MachineParams
from pmsmlab.simulation import MachineKind, run_scenario, standstill_study_scenario


@pytest.fixture
def ip_params() -> MachineParams:
    return MachineParams.from_dq(R=0.01, Ld=0.5e-3, Lq=0.8e-3, psi_r=0.0225, p=2, J=0.01)


@pytest.fixture
def sp_params() -> MachineParams:
    return MachineParams(R=0.01, L0=0.65e-3, L2=0.0, psi_r=0.0225, p=2, J=0.01)


@pytest.fixture(scope="session")
def ipmsm_log():
    return run_scenario(standstill_study_scenario(MachineKind.IPMSM))


@pytest.fixture(scope="session")
def spmsm_log():
    return run_scenario(standstill_study_scenario(MachineKind.SPMSM))
