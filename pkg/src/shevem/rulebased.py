"""Rule-based supervisory controllers and their forward simulation.

HPTS switches the engine with a two-threshold hysteresis on the load and,
while the engine runs, holds the battery at a constant charging offset.
XOS is the single-threshold, zero-offset special case.  ECMS is included
only to show that with a linear fuel map it always picks a vertex of the
control box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analytic_pmp import control_box
from .cycles import LoadProfile
from .errors import DiscriminantNegative, InvalidParams
from .powertrain import LinearFCM, VehicleParams, soc_rate
from .trajectory import Trajectory, count_switches

__all__ = [
    "HptsParams", "XOS", "ECMS", "hpts_step", "hpts_decide", "ecms_decide",
    "simulate", "hpts_depletion", "count_switches", "Trajectory",
]


@dataclass(frozen=True)
class HptsParams:
    """Engine-on threshold, engine-off threshold and charging offset (W)."""

    p_high: float
    p_low: float
    delta: float

    def __post_init__(self):
        if not 0.0 <= self.p_low <= self.p_high:
            raise InvalidParams(f"need 0 <= P_low ({self.p_low}) <= P_high ({self.p_high})")

    def check(self, params: VehicleParams):
        if self.p_high > params.p_ps_max:
            raise InvalidParams("engine-on threshold above the engine's power limit")
        return self

    @property
    def kw(self):
        return (self.p_high / 1e3, self.p_low / 1e3, self.delta / 1e3)


@dataclass(frozen=True)
class XOS:
    """Engine covers the whole load above a single threshold; electric below."""

    threshold: float

    def as_hpts(self) -> HptsParams:
        return HptsParams(self.threshold, self.threshold, 0.0)


@dataclass(frozen=True)
class ECMS:
    """Pointwise equivalent-fuel minimiser with discharge/charge factors."""

    s_d: float
    s_c: float


def _emergency(p_pl, soc, params):
    """SOC-limit overrides; ``None`` when SOC is strictly inside the window.

    Returns (P_PS, P_SS, s, dissipated).
    """
    if soc >= params.soc_max:
        if p_pl < 0.0:
            # battery full while braking: engine off, regeneration dumped to the brakes
            return 0.0, 0.0, 0, True
        p_ss = min(params.p_ss_max, p_pl)
        if p_pl > p_ss:
            return p_pl - p_ss, p_ss, 1, False
        return 0.0, p_ss, 0, False
    if soc <= params.soc_min:
        p_ss = max(p_pl - params.p_ps_max, params.p_ss_min)
        return p_pl - p_ss, p_ss, 1, False
    return None


def hpts_decide(p_pl, soc, s_prev, hp: HptsParams, params: VehicleParams):
    """One HPTS decision: (P_PS, P_SS, s, dissipated)."""
    override = _emergency(p_pl, soc, params)
    if override is not None:
        return override
    if p_pl <= hp.p_low:
        s = 0
    elif p_pl > hp.p_high:
        s = 1
    else:
        s = s_prev
    if s == 0 and p_pl > params.p_ss_max:
        s = 1  # the battery alone cannot carry the load; engine-on rule applies
    if s == 0:
        return 0.0, p_pl, 0, False
    lo, hi = control_box(p_pl, params)
    p_ss = float(min(max(-hp.delta, lo), hi))
    return p_pl - p_ss, p_ss, 1, False


def hpts_step(p_pl, soc, s_prev, hp: HptsParams, params: VehicleParams):
    """One HPTS decision as (P_PS, P_SS, s)."""
    return hpts_decide(p_pl, soc, s_prev, hp, params)[:3]


def ecms_decide(p_pl, soc, ecms: ECMS, params: VehicleParams, fcm=None):
    """Minimise equivalent fuel rate over engine-off and the engine-on box."""
    override = _emergency(p_pl, soc, params)
    if override is not None:
        return override
    fcm = fcm or LinearFCM.from_params(params)

    def battery_term(p_ss):
        factor = np.where(p_ss >= 0.0, ecms.s_d, ecms.s_c)
        return factor * p_ss / params.q_hv

    lo, hi = control_box(p_pl, params)
    ladder = np.unique(np.concatenate(([lo, hi], [0.0] if lo <= 0.0 <= hi else [], np.linspace(lo, hi, 41))))
    cost_on = fcm(p_pl - ladder, 1) + battery_term(ladder)
    j = int(np.argmin(cost_on))
    best = (float(cost_on[j]), p_pl - float(ladder[j]), float(ladder[j]), 1)
    if params.p_ss_min <= p_pl <= params.p_ss_max:
        cost_off = float(battery_term(np.float64(p_pl)))
        if cost_off <= best[0]:
            best = (cost_off, 0.0, float(p_pl), 0)
    return best[1], best[2], best[3], False


def _decide(controller, p_pl, soc, s_prev, params, fcm):
    if isinstance(controller, HptsParams):
        return hpts_decide(p_pl, soc, s_prev, controller, params)
    if isinstance(controller, XOS):
        return hpts_decide(p_pl, soc, s_prev, controller.as_hpts(), params)
    if isinstance(controller, ECMS):
        return ecms_decide(p_pl, soc, controller, params, fcm)
    raise TypeError(f"unsupported controller {controller!r}")


def _scalar_soc_rate(p_ss, params):
    """Scalar twin of :func:`soc_rate`, same arithmetic, without array overhead."""
    p_b = p_ss / params.eta_dc if p_ss >= 0.0 else p_ss * params.eta_dc
    disc = params.v_oc**2 - 4.0 * p_b * params.r_b
    if disc < 0.0:
        raise DiscriminantNegative(f"battery power {p_b:.1f} W exceeds the deliverable maximum")
    return -(2.0 * p_b / (params.v_oc + math.sqrt(disc))) / params.q_max


def _loop(p_pl, dt, soc0, s_prev, controller, params, fcm, k0=0):
    n = len(p_pl)
    p_ps, p_ss = np.empty(n), np.empty(n)
    s, dumped = np.empty(n, np.int8), np.zeros(n, bool)
    soc = np.empty(n + 1)
    soc[0] = soc0
    for k in range(n):
        p_ps[k], p_ss[k], s[k], dumped[k] = _decide(controller, p_pl[k], soc[k], s_prev, params, fcm)
        try:
            soc[k + 1] = soc[k] + _scalar_soc_rate(float(p_ss[k]), params) * dt
        except DiscriminantNegative as exc:
            raise DiscriminantNegative(str(exc), step=k0 + k) from None
        s_prev = int(s[k])
    return p_ps, p_ss, s, soc, dumped


def _hpts_fast(p_pl, dt, soc0, s_init, hp: HptsParams, params):
    """Vectorised HPTS while SOC stays strictly inside its window.

    Returns arrays for the leading steps and the index of the first step
    whose starting SOC touches a limit (``len(p_pl)`` if none).
    """
    n = len(p_pl)
    event = np.full(n, -1, np.int8)
    event[p_pl > hp.p_high] = 1
    event[p_pl <= hp.p_low] = 0
    event[p_pl > params.p_ss_max] = 1
    idx = np.where(event >= 0, np.arange(n), -1)
    idx = np.maximum.accumulate(idx)
    s = np.where(idx >= 0, event[np.maximum(idx, 0)], s_init).astype(np.int8)
    lo, hi = control_box(p_pl, params)
    p_ss = np.where(s == 1, np.minimum(np.maximum(-hp.delta, lo), hi), p_pl)
    p_ps = p_pl - p_ss
    soc = np.cumsum(np.concatenate(([soc0], soc_rate(p_ss, params) * dt)))
    hit = (soc[:-1] >= params.soc_max) | (soc[:-1] <= params.soc_min)
    first = int(np.argmax(hit)) if hit.any() else n
    return p_ps, p_ss, s, soc, first


def hpts_depletion(profile: LoadProfile, hp: HptsParams, soc0, params: VehicleParams,
                   fcm=None, s_init: int = 0) -> float:
    """SOC(0) - SOC(T) of an HPTS run, skipping the trajectory bookkeeping when possible."""
    n = len(profile)
    if n == 0:
        return 0.0
    soc = _hpts_fast(profile.p_pl, profile.dt, soc0, s_init, hp, params)[3]
    if not ((soc[:-1] >= params.soc_max) | (soc[:-1] <= params.soc_min)).any():
        return float(soc0 - soc[-1])
    return simulate(profile, hp, soc0, params, fcm, s_init).dsoc


def simulate(profile: LoadProfile, controller, soc0, params: VehicleParams | None = None,
             fcm=None, s_init: int = 0, fast: bool = True) -> Trajectory:
    """Forward-Euler run of a rule-based controller over a load profile."""
    params = params or VehicleParams()
    fcm = fcm or LinearFCM.from_params(params)
    p_pl, dt, n = profile.p_pl, profile.dt, len(profile)
    hp = controller.as_hpts() if isinstance(controller, XOS) else controller
    if isinstance(hp, HptsParams):
        hp.check(params)
    if fast and isinstance(hp, HptsParams) and n:
        p_ps, p_ss, s, soc, first = _hpts_fast(p_pl, dt, soc0, s_init, hp, params)
        dumped = np.zeros(n, bool)
        if first < n:
            s_prev = int(s[first - 1]) if first > 0 else s_init
            tail = _loop(p_pl[first:], dt, soc[first], s_prev, hp, params, fcm, first)
            p_ps[first:], p_ss[first:], s[first:], dumped[first:] = tail[0], tail[1], tail[2], tail[4]
            soc[first + 1:] = tail[3][1:]
    else:
        p_ps, p_ss, s, soc, dumped = _loop(p_pl, dt, soc0, s_init, controller, params, fcm)
    p_ps = np.where(s == 1, p_ps, 0.0)
    name = type(controller).__name__ if not isinstance(controller, HptsParams) else "HPTS"
    return Trajectory.build(dt, p_pl, p_ps, p_ss, s, soc, params, fcm, s_init=s_init,
                            emergency=dumped, name=name)
