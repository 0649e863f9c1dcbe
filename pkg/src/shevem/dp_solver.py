"""Backward dynamic programming over (SOC, previous engine state).

The SOC change of a control does not depend on the SOC, so the set of SOC
values from which the terminal band is reachable is an interval whose ends
move by the extreme SOC changes each step.  Those ends are carried along
with their exact values and used as extra interpolation points, so cells
straddling the edge of the feasible set stay usable instead of turning
infinite and eroding the set by one cell per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytic_pmp import control_box
from .cycles import LoadProfile
from .errors import Infeasible, NotSolved
from .powertrain import LinearFCM, VehicleParams, soc_rate
from .trajectory import Trajectory

DP_MODES = ("off", "lossless", "penalized")
_SNAP = 1e-9  # fraction of a cell treated as lying exactly on a node
_EDGE = 1e-12  # SOC slack when testing membership of the feasible interval


@dataclass(frozen=True)
class DpGrid:
    n_soc: int = 601
    n_u: int = 301
    band: float | None = 1e-5  # terminal half-width in SOC; None means half a cell
    soc_lo: float | None = None
    soc_hi: float | None = None

    def nodes(self, params: VehicleParams):
        lo = params.soc_min if self.soc_lo is None else self.soc_lo
        hi = params.soc_max if self.soc_hi is None else self.soc_hi
        return np.linspace(lo, hi, self.n_soc)

    def terminal_band(self, params: VehicleParams):
        if self.band is not None:
            return self.band
        nodes = self.nodes(params)
        return 0.5 * (nodes[1] - nodes[0])


def candidate_controls(p_pl, n_u, params: VehicleParams):
    """Engine-on battery powers: a uniform ladder plus the box ends, 0 and P_PL."""
    lo, hi = control_box(p_pl, params)
    extra = [v for v in (0.0, p_pl) if lo <= v <= hi]
    return np.unique(np.concatenate((np.linspace(lo, hi, n_u), extra)))


@dataclass
class _Slice:
    """Value function at one step: node values plus the feasible interval ends."""

    nodes_value: np.ndarray  # (2, n_soc), rows = previous engine state
    lo: float
    hi: float
    lo_value: np.ndarray  # (2,)
    hi_value: np.ndarray


class DpSolver:
    """Value iteration for one load profile; keeps every value slice."""

    def __init__(self, params: VehicleParams | None = None, grid: DpGrid | None = None, fcm=None):
        self.params = params or VehicleParams()
        self.grid = grid or DpGrid()
        self.fcm = fcm or LinearFCM.from_params(self.params)
        self.slices = None

    def _step_options(self, k, p_pl, mode, controls):
        """Per engine state: (battery powers, fuel per step, SOC change)."""
        params, dt = self.params, self.dt
        if controls is not None:
            on = np.asarray(controls[k], float)
        else:
            on = candidate_controls(p_pl, self.grid.n_u, params)
        options = {1: (on, self.fcm(p_pl - on, 1) * dt, soc_rate(on, params) * dt)}
        if mode != "off" and params.p_ss_min <= p_pl <= params.p_ss_max:
            off = np.array([p_pl])
            options[0] = (off, np.zeros(1), soc_rate(off, params) * dt)
        return options

    def _interp(self, sl: _Slice, s, x):
        """Value after a transition into engine state ``s`` landing at SOC ``x``."""
        v = sl.nodes_value[s]
        n = len(v)
        pos = (x - self.nodes[0]) / self.h
        base = np.floor(pos)
        frac = pos - base
        up = frac > 1.0 - _SNAP
        base = base + up
        frac = np.where(up | (frac < _SNAP), 0.0, frac)
        i = base.astype(np.int64)
        inside = (x >= sl.lo - _EDGE) & (x <= sl.hi + _EDGE)
        i0 = np.clip(i, 0, n - 1)
        i1 = np.clip(i + 1, 0, n - 1)
        valid0 = (i >= 0) & (i < n)
        valid1 = (i + 1 >= 0) & (i + 1 < n)
        x0 = np.where(valid0, self.nodes[i0], -np.inf)
        x1 = np.where(valid1, self.nodes[i1], np.inf)
        v0 = np.where(valid0, v[i0], np.inf)
        v1 = np.where(valid1, v[i1], np.inf)
        # a missing neighbour is replaced by the interval end inside the same cell
        use_lo = ~np.isfinite(v0) & (sl.lo > x0 - _EDGE)
        x0 = np.where(use_lo, sl.lo, x0)
        v0 = np.where(use_lo, sl.lo_value[s], v0)
        use_hi = ~np.isfinite(v1) & (sl.hi < x1 + _EDGE)
        x1 = np.where(use_hi, sl.hi, x1)
        v1 = np.where(use_hi, sl.hi_value[s], v1)
        with np.errstate(invalid="ignore", divide="ignore"):
            span = x1 - x0
            w = np.where(span > 0, (np.clip(x, x0, x1) - x0) / span, 0.0)
            blend = np.where(w <= 0.0, v0, np.where(w >= 1.0, v1, (1.0 - w) * v0 + w * v1))
        out = np.where((frac == 0.0) & valid0, v[i0], blend)
        out = np.where(inside, out, np.inf)
        return np.where(np.isnan(out), np.inf, out)

    def _backup(self, opts, sl_next, x):
        """Best cost-to-go from SOC points ``x`` for each previous engine state."""
        best = {}
        for s, (_, fuel, dsoc) in opts.items():
            reach = x[None, :] + dsoc[:, None]
            best[s] = np.min(fuel[:, None] + self._interp(sl_next, s, reach), axis=0)
        out = np.empty((2, len(x)))
        for prev in (0, 1):
            cands = [best[s] + (self.penalty if (prev == 0 and s == 1) else 0.0) for s in best]
            out[prev] = np.min(cands, axis=0)
        return out

    def solve(self, profile: LoadProfile, soc0, soc_t, mode="penalized", K=None, controls=None) -> Trajectory:
        if mode not in DP_MODES:
            raise ValueError(f"unknown mode {mode!r}; use one of {DP_MODES}")
        params = self.params
        self.dt, self.profile, self.mode = profile.dt, profile, mode
        self.nodes = self.grid.nodes(params)
        self.h = self.nodes[1] - self.nodes[0]
        self.band = self.grid.terminal_band(params)
        self.soc_t = soc_t
        lo = max(self.nodes[0], soc_t - self.band)
        hi = min(self.nodes[-1], soc_t + self.band)
        if lo > hi:
            raise Infeasible(f"terminal SOC {soc_t} outside the grid")
        k_coef = params.k_restart if K is None else K
        self.penalty = 0.0 if mode != "penalized" else k_coef * params.q_f0
        n = len(profile)
        terminal = np.where((self.nodes >= lo - _EDGE) & (self.nodes <= hi + _EDGE), 0.0, np.inf)
        slices = [None] * (n + 1)
        slices[n] = _Slice(np.vstack((terminal, terminal)), lo, hi, np.zeros(2), np.zeros(2))
        self._options = [None] * n
        for k in range(n - 1, -1, -1):
            opts = self._step_options(k, profile.p_pl[k], mode, controls)
            self._options[k] = opts
            nxt = slices[k + 1]
            d_all = np.concatenate([o[2] for o in opts.values()])
            lo = max(self.nodes[0], nxt.lo - d_all.max())
            hi = min(self.nodes[-1], nxt.hi - d_all.min())
            if lo > hi + _EDGE:
                raise Infeasible(f"terminal band unreachable from step {k}")
            nodes_value = self._backup(opts, nxt, self.nodes)
            ends = self._backup(opts, nxt, np.array([lo, hi]))
            slices[k] = _Slice(nodes_value, lo, hi, ends[:, 0], ends[:, 1])
        self.slices = slices
        return self._rollout(soc0)

    def _rollout(self, soc0):
        params, n, dt = self.params, len(self.profile), self.dt
        s_prev = 1 if self.mode == "off" else 0
        s_init = s_prev
        soc = np.empty(n + 1)
        soc[0] = soc0
        p_ss = np.empty(n)
        s_out = np.empty(n, np.int8)
        for k in range(n):
            best = (np.inf, None, None, None)
            for s, (powers, fuel, dsoc) in self._options[k].items():
                nxt = soc[k] + dsoc
                future = self._interp(self.slices[k + 1], s, nxt)
                total = fuel + future + (self.penalty if (s_prev == 0 and s == 1) else 0.0)
                j = int(np.argmin(total))
                if total[j] < best[0]:
                    best = (total[j], s, powers[j], nxt[j])
            if not np.isfinite(best[0]):
                raise Infeasible(f"no control reaches the terminal band from step {k}")
            _, s_prev, p_ss[k], soc[k + 1] = best
            s_out[k] = s_prev
        p_ps = np.where(s_out == 1, self.profile.p_pl - p_ss, 0.0)
        cost = float(self._interp(self.slices[0], s_init, np.array([soc0]))[0])
        return Trajectory.build(dt, self.profile.p_pl, p_ps, p_ss, s_out, soc, params, self.fcm,
                                restart_fuel=self.penalty, s_init=s_init,
                                name=f"DP-{self.mode}", meta={"cost": cost})

    def value_slice(self, k):
        """Value function at step ``k``, shape (2, n_soc); row = previous engine state."""
        if self.slices is None:
            raise NotSolved("call solve() first")
        return self.slices[k].nodes_value

    def feasible_interval(self, k):
        if self.slices is None:
            raise NotSolved("call solve() first")
        return self.slices[k].lo, self.slices[k].hi


def dp_solve(profile: LoadProfile, soc0, soc_t, sss="penalized", grid: DpGrid | None = None,
             params: VehicleParams | None = None, fcm=None, K=None, controls=None) -> Trajectory:
    """Globally optimal trajectory on the grid; see :class:`DpSolver`."""
    solver = DpSolver(params, grid, fcm)
    traj = solver.solve(profile, soc0, soc_t, sss, K=K, controls=controls)
    traj.meta["solver"] = solver
    return traj


def dp_value_slice(solver_or_traj, k):
    solver = solver_or_traj
    if isinstance(solver_or_traj, Trajectory):
        solver = solver_or_traj.meta.get("solver")
    if solver is None:
        raise NotSolved("no dynamic-programming run attached")
    return solver.value_slice(k)
