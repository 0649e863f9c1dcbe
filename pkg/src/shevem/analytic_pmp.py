"""Closed-form minimum-principle power split and costate search.

With a linear fuel map and constant open-circuit voltage the costate is
constant on every arc where the SOC bounds are inactive.  The optimal battery
power is then a pointwise function of the costate and the load, so the only
unknown is a scalar found by shooting on the terminal SOC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cycles import LoadProfile
from .errors import NoConvergence, RecursionLimit, TargetUnreachable
from .powertrain import VehicleParams, soc_rate
from .trajectory import Trajectory

SSS_MODES = ("off", "lossless")


def regime_boundaries(params: VehicleParams):
    """Costate values separating the discharge, engine-only and charge regimes."""
    aq = params.alpha_f * params.q_max * params.v_oc
    return -aq * params.eta_dc, -aq / params.eta_dc


def interior_optima(lam, params: VehicleParams):
    """Stationary battery powers of the discharge and charge branches."""
    a2q2 = (params.alpha_f * params.q_max) ** 2
    eta, v2, r4 = params.eta_dc, params.v_oc**2, 4.0 * params.r_b
    discharge = (eta * v2 - lam**2 / (a2q2 * eta)) / r4
    charge = (v2 / eta - lam**2 * eta / a2q2) / r4
    return discharge, charge


def control_box(p_pl, params: VehicleParams):
    """Feasible battery power range with the engine running."""
    p_pl = np.asarray(p_pl, float)
    lo = np.maximum(p_pl - params.p_ps_max, params.p_ss_min)
    hi = np.minimum(params.p_ss_max, p_pl)
    return lo, hi


def regime_tag(lam, params: VehicleParams) -> str:
    b1, b2 = regime_boundaries(params)
    if lam >= 0:
        return "R1"
    if lam > b1:
        return "R2"
    if lam >= b2:
        return "R3"
    return "R4"


def regime_control(lam, p_pl, params: VehicleParams):
    """Optimal battery power for engine-on operation at costate ``lam``."""
    p_pl = np.asarray(p_pl, float)
    lo, hi = control_box(p_pl, params)
    tag = "R4" if lam == -math.inf else regime_tag(lam, params)
    if tag == "R1":
        out = hi
    elif tag == "R2":
        out = np.minimum(interior_optima(lam, params)[0], hi)
    elif tag == "R3":
        out = np.minimum(0.0, p_pl)
    else:
        charge = -math.inf if lam == -math.inf else interior_optima(lam, params)[1]
        out = np.minimum(np.maximum(charge, lo), p_pl)
    out = np.clip(out, lo, hi)
    return float(out) if out.ndim == 0 else out


def hamiltonian(p_ss, p_pl, lam, params: VehicleParams, s=1):
    """Fuel rate plus costate-weighted SOC rate, linear fuel map."""
    p_ps = np.asarray(p_pl, float) - np.asarray(p_ss, float)
    fuel = params.q_f0 * s + params.alpha_f * p_ps * s
    return fuel + lam * soc_rate(p_ss, params)


def _engine_on_off_hamiltonians(lam, p_pl, params):
    p_pl = np.asarray(p_pl, float)
    p_on = regime_control(lam, p_pl, params)
    h_on = hamiltonian(p_on, p_pl, lam, params, s=1)
    feasible_off = (p_pl <= params.p_ss_max) & (p_pl >= params.p_ss_min)
    p_off = np.clip(p_pl, params.p_ss_min, params.p_ss_max)
    h_off = np.where(feasible_off, lam * soc_rate(p_off, params), np.inf)
    return p_on, h_on, h_off


def sss_control(lam, p_pl, params: VehicleParams):
    """Battery power and engine state under a lossless start-stop system.

    The engine is switched off only when that strictly lowers the
    Hamiltonian; ties keep it running to avoid needless switching.
    """
    p_pl = np.asarray(p_pl, float)
    lo, _ = control_box(p_pl, params)
    if lam == -math.inf:
        p_ss = np.minimum(lo, p_pl)
        return p_ss, np.ones(p_pl.shape, np.int8)
    p_on, h_on, h_off = _engine_on_off_hamiltonians(lam, p_pl, params)
    off = h_off < h_on
    p_ss = np.where(off, p_pl, p_on)
    return p_ss, np.where(off, 0, 1).astype(np.int8)


@dataclass(frozen=True)
class ElectricRegion:
    """Closed interval of propulsion loads served with the engine off."""

    lower: float
    upper: float

    @property
    def empty(self):
        return not self.lower <= self.upper

    @property
    def width(self):
        return 0.0 if self.empty else self.upper - self.lower

    def __contains__(self, p):
        return not self.empty and self.lower <= p <= self.upper


EMPTY_REGION = ElectricRegion(math.inf, -math.inf)


def _refine(g, a, b, iters=80):
    """Bisect the sign change of ``g`` between ``a`` (g > 0) and ``b`` (g <= 0)."""
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if g(mid) > 0:
            a = mid
        else:
            b = mid
    return a


def sss_thresholds(lam, params: VehicleParams, samples: int = 2001) -> ElectricRegion:
    """Propulsion-load interval where the engine is off at costate ``lam``.

    The engine-on minus engine-off Hamiltonian gap is concave in the load, so
    the region is a single interval; its ends are located by dense sampling
    over ``[0, P_SS_max]`` and refined by bisection.
    """

    def gap(p):
        _, h_on, h_off = _engine_on_off_hamiltonians(lam, p, params)
        return h_on - h_off

    grid = np.linspace(0.0, params.p_ss_max, samples)
    values = gap(grid)
    inside = values > 0
    if not inside.any():
        return EMPTY_REGION
    best = int(np.argmax(values))
    i0 = best
    while i0 > 0 and inside[i0 - 1]:
        i0 -= 1
    i1 = best
    while i1 < samples - 1 and inside[i1 + 1]:
        i1 += 1
    g = lambda p: float(gap(p))  # noqa: E731
    lower = grid[0] if i0 == 0 else _refine(g, grid[i0], grid[i0 - 1])
    upper = grid[-1] if i1 == samples - 1 else _refine(g, grid[i1], grid[i1 + 1])
    return ElectricRegion(float(lower), float(upper))


@dataclass(frozen=True)
class Arc:
    t_start: float
    t_end: float
    lam: float


@dataclass
class CostateSolution:
    """Piecewise-constant costate and the power split it induces."""

    arcs: list
    dt: float
    p_pl: np.ndarray
    p_ss: np.ndarray
    s: np.ndarray
    soc: np.ndarray
    sss: str
    lam_steps: np.ndarray
    evaluations: list = field(default_factory=list, repr=False)

    @property
    def junctions(self):
        return [a.t_end for a in self.arcs[:-1]]

    @property
    def lam(self):
        return self.arcs[0].lam if len(self.arcs) == 1 else [a.lam for a in self.arcs]

    @property
    def p_ps(self):
        return np.where(self.s == 1, self.p_pl - self.p_ss, 0.0)

    def fuel(self, params: VehicleParams) -> float:
        rate = params.q_f0 * self.s + params.alpha_f * self.p_ps
        return float(np.sum(rate) * self.dt)

    def to_trajectory(self, params: VehicleParams, restart_fuel=0.0, name="") -> Trajectory:
        s_init = 1 if self.sss == "off" else 0
        return Trajectory.build(self.dt, self.p_pl, self.p_ps, self.p_ss, self.s, self.soc, params,
                                restart_fuel=restart_fuel, s_init=s_init, name=name,
                                lam=self.lam_steps)


def apply_costate(lam, p_pl, sss, params: VehicleParams):
    """Battery power and engine state for every step at a fixed costate."""
    if sss == "off":
        p_ss = np.asarray(regime_control(lam, p_pl, params), float).reshape(np.shape(p_pl))
        return p_ss, np.ones(np.shape(p_pl), np.int8)
    if sss == "lossless":
        return sss_control(lam, p_pl, params)
    raise ValueError(f"unknown start-stop mode {sss!r}; use one of {SSS_MODES}")


def terminal_soc(lam, profile: LoadProfile, soc0, sss, params):
    p_ss, _ = apply_costate(lam, profile.p_pl, sss, params)
    return soc0 + float(np.sum(soc_rate(p_ss, params) * profile.dt))


def _soc_path(p_ss, soc0, dt, params):
    return np.concatenate(([soc0], soc0 + np.cumsum(soc_rate(p_ss, params) * dt)))


def shoot_costate(profile: LoadProfile, soc0, socT, sss="off", params: VehicleParams | None = None,
                  tol=1e-4, max_iter=200, side=None, t_offset=0.0) -> CostateSolution:
    """Find the constant costate that meets the terminal SOC.

    ``side='below'`` (``'above'``) additionally requires the terminal SOC to
    land at or below (above) the target, used when the target is a bound.
    """
    params = params or VehicleParams()
    history = []

    def miss(lam):
        value = terminal_soc(lam, profile, soc0, sss, params) - socT
        history.append((lam, value))
        return value

    def accept(value):
        if abs(value) > tol:
            return False
        return side is None or (side == "below" and value <= 0) or (side == "above" and value >= 0)

    def finish(lam):
        p_ss, s = apply_costate(lam, profile.p_pl, sss, params)
        _check_monotone(history)
        t_end = t_offset + len(profile) * profile.dt
        return CostateSolution([Arc(t_offset, t_end, lam)], profile.dt, profile.p_pl, p_ss, s,
                               _soc_path(p_ss, soc0, profile.dt, params), sss,
                               np.full(len(profile), lam), history)

    most_charge, most_discharge = miss(-math.inf), miss(0.0)
    if most_charge < -tol or most_discharge > tol:
        raise TargetUnreachable(
            f"terminal SOC {socT:.4f} outside reachable [{most_discharge + socT:.4f}, "
            f"{most_charge + socT:.4f}] from {soc0:.4f}"
        )
    if accept(most_discharge):
        return finish(0.0)

    b1, b2 = regime_boundaries(params)
    # upper end: f(hi) <= 0, moving from B1 toward zero
    hi, f_hi = b1, miss(b1)
    lo = None
    while f_hi > 0:
        lo, f_lo = hi, f_hi
        hi = hi / 4.0
        if abs(hi) < 1e-9:
            hi, f_hi = 0.0, most_discharge
            break
        f_hi = miss(hi)
    if accept(f_hi):
        return finish(hi)
    if lo is None:
        lo, f_lo = b2, miss(b2)
        for _ in range(max_iter):
            if f_lo >= 0 or accept(f_lo):
                break
            hi, f_hi = lo, f_lo
            lo *= 2.0
            f_lo = miss(lo)
    if accept(f_lo):
        return finish(lo)
    if f_lo < 0:
        raise NoConvergence("no charging costate found", {"lambda": lo, "miss": f_lo})

    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = miss(mid)
        if accept(f_mid):
            return finish(mid)
        if f_mid > 0:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
        if hi - lo <= 1e-15 * max(1.0, abs(lo)):
            break
    _check_monotone(history)
    raise NoConvergence(
        f"costate search stalled: bracket [{lo:.10g}, {hi:.10g}] maps to SOC misses "
        f"[{f_lo:.3g}, {f_hi:.3g}]",
        {"bracket": (lo, hi), "miss": (f_lo, f_hi), "evaluations": len(history)},
    )


def _check_monotone(history):
    pts = sorted((lam, f) for lam, f in history if np.isfinite(lam))
    for (l0, f0), (l1, f1) in zip(pts, pts[1:]):
        if l1 > l0 and f1 > f0 + 1e-12:
            raise NoConvergence(
                "terminal SOC increased with the costate",
                {"lambda": (l0, l1), "miss": (f0, f1)},
            )


def solve_constrained(profile: LoadProfile, soc0, socT, sss="off", params: VehicleParams | None = None,
                      tol=1e-4, max_depth=32, violation_tol=1e-9) -> CostateSolution:
    """Costate search with the SOC window enforced by recursive arc splitting.

    When the unconstrained trajectory leaves the window, the step with the
    largest excursion (earliest on ties) becomes a junction pinned to the
    violated bound and both halves are solved again.
    """
    params = params or VehicleParams()
    return _solve(profile.p_pl, profile.dt, soc0, socT, sss, params, tol, max_depth,
                  violation_tol, 0, 0.0, None)


def _solve(p_pl, dt, soc0, socT, sss, params, tol, max_depth, violation_tol, depth, t0, side):
    if depth > max_depth:
        raise RecursionLimit(f"more than {max_depth} nested SOC-bound splits")
    sub = LoadProfile(dt, p_pl)
    sol = shoot_costate(sub, soc0, socT, sss, params, tol=tol, side=side, t_offset=t0)
    inner = sol.soc[1:-1]
    if inner.size == 0:
        return sol
    over = inner - params.soc_max
    under = params.soc_min - inner
    excess = np.maximum(over, under)
    k = int(np.argmax(excess))
    if excess[k] <= violation_tol:
        return sol
    upper = over[k] >= under[k]
    bound = params.soc_max if upper else params.soc_min
    split = k + 1
    pin_side = "below" if upper else "above"
    left = _solve(p_pl[:split], dt, soc0, bound, sss, params, tol, max_depth, violation_tol,
                  depth + 1, t0, pin_side)
    right = _solve(p_pl[split:], dt, left.soc[-1], socT, sss, params, tol, max_depth, violation_tol,
                   depth + 1, t0 + split * dt, side)
    return CostateSolution(
        left.arcs + right.arcs, dt, p_pl,
        np.concatenate((left.p_ss, right.p_ss)),
        np.concatenate((left.s, right.s)),
        np.concatenate((left.soc, right.soc[1:])),
        sss,
        np.concatenate((left.lam_steps, right.lam_steps)),
        left.evaluations + right.evaluations,
    )
