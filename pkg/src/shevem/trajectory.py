"""Per-step simulation record shared by every solver and controller."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .powertrain import LinearFCM, VehicleParams


@dataclass
class Trajectory:
    """Decisions and states of one mission.

    Step ``k`` applies ``p_ps[k]``, ``p_ss[k]`` and engine state ``s[k]`` over
    ``[k*dt, (k+1)*dt)``.  ``soc``, ``m_f`` and ``n_r`` hold ``N + 1`` samples:
    the value before step 0 followed by the value after every step.
    ``s_init`` is the engine state before the mission starts.
    """

    dt: float
    p_pl: np.ndarray
    p_ps: np.ndarray
    p_ss: np.ndarray
    s: np.ndarray
    soc: np.ndarray
    m_f: np.ndarray
    n_r: np.ndarray
    emergency: np.ndarray
    s_init: int = 0
    name: str = ""
    lam: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def build(cls, dt, p_pl, p_ps, p_ss, s, soc, params: VehicleParams, fcm=None,
              restart_fuel=None, s_init=0, emergency=None, **kw) -> Trajectory:
        """Assemble a trajectory, accumulating fuel and restarts from decisions."""
        fcm = fcm or LinearFCM.from_params(params)
        s = np.asarray(s, dtype=np.int8)
        p_ps = np.asarray(p_ps, float)
        penalty = params.restart_fuel if restart_fuel is None else restart_fuel
        prev = np.concatenate(([s_init], s[:-1]))
        starts = (prev == 0) & (s == 1)
        increments = starts * penalty + np.asarray(fcm(p_ps, s), float) * dt
        m_f = np.concatenate(([0.0], np.cumsum(increments)))
        n_r = np.concatenate(([0], np.cumsum(starts)))
        n = len(s)
        if emergency is None:
            emergency = np.zeros(n, bool)
        return cls(dt, np.asarray(p_pl, float), p_ps, np.asarray(p_ss, float), s,
                   np.asarray(soc, float), m_f, n_r, np.asarray(emergency, bool), s_init, **kw)

    def __len__(self):
        return len(self.s)

    @property
    def t(self):
        return np.arange(len(self.s) + 1) * self.dt

    @property
    def fuel(self) -> float:
        """Total fuel in kg, restart penalties included."""
        return float(self.m_f[-1])

    @property
    def fuel_g(self) -> float:
        return 1e3 * self.fuel

    @property
    def dsoc(self) -> float:
        """Net depletion SOC(0) - SOC(T); positive when the battery discharged."""
        return float(self.soc[0] - self.soc[-1])

    @property
    def restarts(self) -> int:
        return int(self.n_r[-1])

    @property
    def engine_on_s(self) -> float:
        return float(np.sum(self.s) * self.dt)

    def balance_residual(self):
        return self.p_pl - (self.s * self.p_ps + self.p_ss)

    def summary(self) -> dict:
        return {
            "fuel_g": self.fuel_g,
            "dsoc": self.dsoc,
            "n_restarts": self.restarts,
            "engine_on_s": self.engine_on_s,
        }

    def to_csv(self, path, header=""):
        lam = self.lam if self.lam is not None else np.full(len(self), np.nan)
        with open(path, "w", newline="") as fh:
            fh.write(header)
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_s", "P_PL_W", "P_PS_W", "P_SS_W", "s", "SOC", "lambda_kg", "m_f_kg", "N_r"])
            for k in range(len(self)):
                w.writerow([f"{k * self.dt:g}", repr(float(self.p_pl[k])), repr(float(self.p_ps[k])),
                            repr(float(self.p_ss[k])), int(self.s[k]), repr(float(self.soc[k])),
                            "" if np.isnan(lam[k]) else repr(float(lam[k])),
                            repr(float(self.m_f[k])), int(self.n_r[k])])
            n = len(self)
            w.writerow([f"{n * self.dt:g}", "", "", "", "", repr(float(self.soc[n])), "",
                        repr(float(self.m_f[n])), int(self.n_r[n])])

    def summary_json(self, path, extra=None):
        data = self.summary()
        if extra:
            data.update(extra)
        with open(path, "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)


def count_switches(traj_or_s, s_init=None):
    """Engine restarts (0->1 transitions) and engine-on duty fraction.

    For a bare state array the engine is assumed to already be in ``s[0]``
    before the first step unless ``s_init`` says otherwise.
    """
    if isinstance(traj_or_s, Trajectory):
        s = np.asarray(traj_or_s.s)
        s_init = traj_or_s.s_init if s_init is None else s_init
    else:
        s = np.asarray(traj_or_s)
    if len(s) == 0:
        return 0, 0.0
    prev = np.concatenate(([s[0] if s_init is None else s_init], s[:-1]))
    n_r = int(np.sum((prev == 0) & (s == 1)))
    return n_r, float(np.mean(s))
