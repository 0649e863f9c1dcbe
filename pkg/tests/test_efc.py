import json

import numpy as np
import pytest

from conftest import stage_factors, stage_profile
from shevem.cycles import LoadProfile
from shevem.dp_solver import DpGrid
from shevem.efc import EquivalenceFactors, cs_necessity_scan, efc_mass, efc_of, identify_factors, sharing_run
from shevem.errors import DegenerateSweep, Infeasible
from shevem.powertrain import VehicleParams, battery_current
from shevem.rulebased import HptsParams, simulate

FACTORS = EquivalenceFactors(2.6, 2.4, 1.0, 1.0, 0.1, 0.1)


def test_pure_engine_share_leaves_battery_idle():
    profile, params = stage_profile("M")
    e_e, _, soc = sharing_run(profile, 1.0, 0.65, params)
    regen = profile.p_pl[profile.p_pl <= 0]
    assert e_e == pytest.approx(float(np.sum(battery_current(regen, params))) * params.v_oc * profile.dt)
    assert soc[-1] >= 0.65


def _p():
    return VehicleParams()


def test_zero_depletion_is_fuel():
    assert efc_mass(0.1, 0.0, FACTORS, _p()) == 0.1


def test_continuous_across_zero():
    params = _p()
    for fuel in (0.0, 0.05, 0.13):
        above = efc_mass(fuel, 1e-12, FACTORS, params)
        below = efc_mass(fuel, -1e-12, FACTORS, params)
        assert above == pytest.approx(fuel, abs=1e-12) and below == pytest.approx(fuel, abs=1e-12)


def test_branch_selection():
    params = _p()
    energy = 0.01 * params.q_max * params.v_oc / params.q_hv
    assert efc_mass(0.1, 0.01, FACTORS, params) == pytest.approx(0.1 + FACTORS.s_d * energy)
    assert efc_mass(0.1, -0.01, FACTORS, params) == pytest.approx(0.1 - FACTORS.s_c * energy)
    assert efc_mass(0.1, 0.01, FACTORS, params) > 0.1 > efc_mass(0.1, -0.01, FACTORS, params)


def test_efc_of_trajectory():
    profile, params = stage_profile("M")
    traj = simulate(profile, HptsParams(15e3, 10e3, 5e3), 0.65, params)
    assert traj.dsoc > 0
    assert efc_of(traj, FACTORS, params) == efc_mass(traj.fuel, traj.dsoc, FACTORS, params)


def test_no_propulsion_is_degenerate(params):
    with pytest.raises(DegenerateSweep):
        identify_factors(LoadProfile(1.0, np.full(20, -3e3)), 0.6, params)


@pytest.mark.parametrize("stage", ["M", "H"])
def test_branches_are_affine(stage):
    factors = stage_factors(stage)
    assert factors.r2_d >= 0.99 and factors.r2_c >= 0.99
    assert factors.s_d > factors.s_c > 0


def test_factors_bracket_engine_efficiency():
    # identified values sit within 1.5% of alpha*q_HV/eta and eta*alpha*q_HV
    params = _p()
    aq = params.alpha_f * params.q_hv
    factors = stage_factors("M")
    assert factors.s_d == pytest.approx(aq / params.eta_dc, rel=1.5e-2)
    assert factors.s_c == pytest.approx(aq * params.eta_dc, rel=1.5e-2)


def test_sweep_respects_soc_window():
    profile, params = stage_profile("M")
    factors = stage_factors("M")
    for u in (1.0 - factors.du_c, 1.0 + factors.du_d):
        soc = sharing_run(profile, u, 0.65, params)[2]
        assert params.soc_min <= soc.min() and soc.max() <= params.soc_max


def test_factor_json(tmp_path):
    params = _p()
    stage_factors("M").to_json(tmp_path / "f.json", params)
    data = json.loads((tmp_path / "f.json").read_text())
    assert {"cycle", "S_d", "S_c", "du", "r2_d", "r2_c", "s_d_ok", "s_c_ok"} <= set(data)


@pytest.mark.xfail(strict=True, reason="marginal SOC value 0.347 kg exceeds S_d*Q*V/q_HV = 0.336 kg, so depleting lowers m_efc")
def test_fine_scan_rises_on_both_sides():
    profile, params = stage_profile("M")
    scan = cs_necessity_scan(profile, 0.65, params, offsets=(-1e-3, 0.0, 1e-3), factors=stage_factors("M"))
    low, mid, high = (row.m_efc for row in scan.rows)
    assert mid < low and mid < high
    assert scan.best.soc_t == 0.65


def test_all_regen_scan(params, tmp_path):
    # charging is forced, so the least-charging reachable target wins
    profile = LoadProfile(1.0, np.full(10, -2e3), "regen")
    scan = cs_necessity_scan(profile, 0.6, params, offsets=(0.0, 0.005, 0.01, 0.015), factors=FACTORS,
                             grid=DpGrid(n_soc=1201))
    reached = [row.soc_t for row in scan.rows]
    assert 0.6 not in reached and len(reached) == 3
    assert scan.best.soc_t == min(reached)
    scan.to_csv(tmp_path / "scan.csv")
    lines = (tmp_path / "scan.csv").read_text().splitlines()
    assert lines[0] == "socT,dsoc,fuel_g,m_efc_g,n_restarts,is_min"
    assert [line.split(",")[-1] for line in lines[1:]] == ["1", "0", "0"]


def test_unreachable_ladder(params):
    with pytest.raises(Infeasible):
        cs_necessity_scan(LoadProfile(1.0, np.full(10, -2e3)), 0.6, params, offsets=(-0.01,), factors=FACTORS)
