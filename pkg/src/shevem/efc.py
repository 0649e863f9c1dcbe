"""Equivalent fuel consumption: factor identification and the CS-necessity scan.

The factors are identified by forcing the engine share of the propulsion
load to a fixed ratio ``u`` and regressing fuel energy against battery
energy on each side of ``u = 1``.  Following the original labelling, the
discharge factor comes from the charging branch (``u >= 1``) and the charge
factor from the discharging branch (``u < 1``).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .analytic_pmp import control_box
from .cycles import LoadProfile
from .dp_solver import DpGrid, dp_solve
from .errors import DegenerateSweep, Infeasible
from .powertrain import LinearFCM, VehicleParams, battery_current
from .trajectory import Trajectory


@dataclass
class EquivalenceFactors:
    s_d: float
    s_c: float
    r2_d: float
    r2_c: float
    du_d: float
    du_c: float
    cycle: str = ""
    sweep: dict = field(default_factory=dict, repr=False)

    @property
    def du(self):
        return min(self.du_d, self.du_c)

    def bounds(self, params: VehicleParams):
        """Reference values (alpha_f*q_HV/eta^2, eta^2*alpha_f*q_HV)."""
        aq = params.alpha_f * params.q_hv
        return aq / params.eta_dc**2, params.eta_dc**2 * aq

    def bound_report(self, params: VehicleParams) -> dict:
        lower_d, upper_c = self.bounds(params)
        return {
            "s_d_lower_bound": lower_d,
            "s_c_upper_bound": upper_c,
            "s_d_ok": bool(self.s_d > lower_d),
            "s_c_ok": bool(self.s_c < upper_c),
        }

    def to_json(self, path, params: VehicleParams | None = None):
        data = {"cycle": self.cycle, "S_d": self.s_d, "S_c": self.s_c, "du": self.du,
                "du_d": self.du_d, "du_c": self.du_c, "r2_d": self.r2_d, "r2_c": self.r2_c}
        if params is not None:
            data.update(self.bound_report(params))
        with open(path, "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)


def sharing_run(profile: LoadProfile, u, soc0, params: VehicleParams, fcm=None):
    """Fixed engine-share run: returns (E_e, E_f, SOC path) in J, J and SOC."""
    fcm = fcm or LinearFCM.from_params(params)
    p_pl = profile.p_pl
    s = (p_pl > 0.0).astype(np.int8)
    lo, hi = control_box(p_pl, params)
    p_ss = np.where(s == 1, np.clip((1.0 - u) * p_pl, lo, hi), p_pl)
    p_ps = np.where(s == 1, p_pl - p_ss, 0.0)
    current = battery_current(p_ss, params)
    soc = soc0 - np.concatenate(([0.0], np.cumsum(current * profile.dt))) / params.q_max
    e_e = float(np.sum(current) * params.v_oc * profile.dt)
    e_f = float(params.q_hv * np.sum(fcm(p_ps, s)) * profile.dt)
    return e_e, e_f, soc


def _fit(e_e, e_f):
    slope, intercept = np.polyfit(e_e, e_f, 1)
    pred = slope * e_e + intercept
    ss_res = float(np.sum((e_f - pred) ** 2))
    ss_tot = float(np.sum((e_f - np.mean(e_f)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return -float(slope), r2


def identify_factors(profile: LoadProfile, soc0, params: VehicleParams | None = None, fcm=None,
                     du0: float = 0.3, n_side: int = 21) -> EquivalenceFactors:
    """Sweep the engine share on each side of 1 and fit the two energy lines."""
    params = params or VehicleParams()
    if not np.any(profile.p_pl > 0.0):
        raise DegenerateSweep("cycle has no propulsion load to share")

    def within(u):
        soc = sharing_run(profile, u, soc0, params, fcm)[2]
        return soc.min() >= params.soc_min and soc.max() <= params.soc_max

    def shrink(sign):
        du = du0
        while not within(1.0 + sign * du):
            du *= 0.5
            if du < 1e-6:
                raise DegenerateSweep("no admissible sharing range around u = 1")
        return du

    du_c, du_d = shrink(+1.0), shrink(-1.0)
    sweep = {}
    results = {}
    for side, us in (("charge", np.linspace(1.0, 1.0 + du_c, n_side)),
                     ("discharge", np.linspace(1.0 - du_d, 1.0, n_side))):
        runs = np.array([sharing_run(profile, u, soc0, params, fcm)[:2] for u in us])
        sweep[side] = {"u": us, "E_e": runs[:, 0], "E_f": runs[:, 1]}
        if np.ptp(runs[:, 0]) <= 0.0:
            raise DegenerateSweep(f"{side} branch has no spread in battery energy")
        results[side] = _fit(runs[:, 0], runs[:, 1])
    (s_d, r2_d), (s_c, r2_c) = results["charge"], results["discharge"]
    return EquivalenceFactors(s_d, s_c, r2_d, r2_c, du_d=du_c, du_c=du_d, cycle=profile.name, sweep=sweep)


def efc_mass(fuel, depletion, factors: EquivalenceFactors, params: VehicleParams) -> float:
    """Fuel plus the equivalent mass of a net SOC depletion SOC(0) - SOC(T)."""
    factor = factors.s_d if depletion >= 0.0 else factors.s_c
    return float(fuel + factor * depletion * params.q_max * params.v_oc / params.q_hv)


def efc_of(traj: Trajectory, factors: EquivalenceFactors, params: VehicleParams | None = None) -> float:
    """Equivalent fuel (kg) of a trajectory, restart penalties included."""
    params = params or VehicleParams()
    return efc_mass(traj.fuel, traj.dsoc, factors, params)


@dataclass
class ScanRow:
    soc_t: float
    depletion: float
    fuel: float
    m_efc: float
    restarts: int


@dataclass
class CsScan:
    soc0: float
    rows: list
    factors: EquivalenceFactors

    @property
    def best(self) -> ScanRow:
        return min(self.rows, key=lambda r: r.m_efc)

    def to_csv(self, path, header=""):
        best = self.best
        with open(path, "w") as fh:
            fh.write(header)
            fh.write("socT,dsoc,fuel_g,m_efc_g,n_restarts,is_min\n")
            for r in self.rows:
                fh.write(f"{r.soc_t!r},{r.depletion!r},{1e3 * r.fuel!r},{1e3 * r.m_efc!r},"
                         f"{r.restarts},{int(r is best)}\n")


def cs_necessity_scan(profile: LoadProfile, soc0, params: VehicleParams | None = None,
                      offsets=(-0.01, -0.005, 0.0, 0.005, 0.01), factors: EquivalenceFactors | None = None,
                      grid: DpGrid | None = None, fcm=None, sss="penalized", K=None) -> CsScan:
    """Optimal fuel for a ladder of terminal SOC targets and its EFC.

    Unreachable targets are left out; Infeasible is raised only when none is reachable.
    """
    params = params or VehicleParams()
    factors = factors or identify_factors(profile, soc0, params, fcm)
    rows = []
    for off in offsets:
        soc_t = soc0 + off
        try:
            traj = dp_solve(profile, soc0, soc_t, sss, grid, params, fcm, K=K)
        except Infeasible:
            continue
        rows.append(ScanRow(soc_t, traj.dsoc, traj.fuel, efc_of(traj, factors, params), traj.restarts))
    if not rows:
        raise Infeasible("no terminal target of the ladder is reachable")
    return CsScan(soc0, rows, factors)


def factors_dict(factors: EquivalenceFactors) -> dict:
    data = asdict(factors)
    data.pop("sweep", None)
    return data
