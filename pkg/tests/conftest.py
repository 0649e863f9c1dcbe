import functools

import pytest

from shevem import VehicleParams, derive_load, dp_solve, tune, tune_xos, wltp_cycle, wltp_stage
from shevem.cycles import pulse_profile

ACCEPTANCE_LINES = {}


def record(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"ACCEPTANCE {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])


@pytest.fixture
def params():
    return VehicleParams()


@pytest.fixture
def pulse():
    return pulse_profile()


# Expensive runs are memoised for the whole session and shared between
# the per-module tests and the acceptance suite.

@functools.lru_cache(maxsize=None)
def stage_profile(stage, k_restart=0.8):
    params = VehicleParams(k_restart=k_restart)
    return derive_load(wltp_stage(wltp_cycle(), stage), params), params


@functools.lru_cache(maxsize=None)
def stage_dp(stage, k_restart=0.8):
    profile, params = stage_profile(stage, k_restart)
    traj = dp_solve(profile, 0.65, 0.65, "penalized", params=params)
    return traj


@functools.lru_cache(maxsize=None)
def stage_tune(stage, k_restart=0.8):
    profile, params = stage_profile(stage, k_restart)
    return tune(profile, soc0=0.65, params=params)


@functools.lru_cache(maxsize=None)
def stage_xos(stage, k_restart=0.8):
    profile, params = stage_profile(stage, k_restart)
    return tune_xos(profile, 0.65, params)


@functools.lru_cache(maxsize=None)
def stage_factors(stage):
    from shevem import identify_factors
    profile, params = stage_profile(stage)
    return identify_factors(profile, 0.65, params)
