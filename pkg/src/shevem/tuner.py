"""Charge-sustaining tuning of the HPTS thresholds and charging offset.

For each (engine-on, engine-off) threshold pair the offset that returns the
battery to its initial SOC is found by bracketed root-finding; the pair with
the least fuel wins.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .cycles import LoadProfile
from .errors import AllInfeasible, Infeasible, InvalidParams, NoConvergence
from .powertrain import LinearFCM, VehicleParams
from .rulebased import XOS, HptsParams, hpts_depletion, simulate


@dataclass(frozen=True)
class TuneSpec:
    """Search grids in W; ``p_low`` values above a given ``p_high`` are skipped."""

    p_high: tuple = tuple(np.arange(5e3, 40e3 + 1.0, 1.25e3))
    p_low: tuple = tuple(np.arange(0.0, 40e3 + 1.0, 1.25e3))
    delta_range: tuple = (-10e3, 30e3)
    cs_tol: float = 1e-3
    xtol: float = 1.0  # W
    deltas: tuple | None = None  # set to sweep the offset on a grid instead of shooting

    def __post_init__(self):
        if self.cs_tol <= 0:
            raise InvalidParams("CS tolerance must be positive")
        if self.delta_range[0] >= self.delta_range[1]:
            raise InvalidParams("offset interval is empty")

    def pairs(self):
        out = [(float(ph), float(pl)) for ph in self.p_high for pl in self.p_low if pl <= ph]
        if not out:
            raise InvalidParams("threshold grid has no pair with P_low <= P_high")
        return out

    @classmethod
    def grid(cls, p_high_kw, p_low_kw, **kw):
        return cls(tuple(1e3 * np.asarray(p_high_kw, float)), tuple(1e3 * np.asarray(p_low_kw, float)), **kw)


@dataclass
class SurfacePoint:
    p_high: float
    p_low: float
    delta: float  # nan when no CS offset exists
    fuel: float
    dsoc: float

    @property
    def feasible(self):
        return np.isfinite(self.delta)


@dataclass
class TuneResult:
    hp: HptsParams
    fuel: float
    dsoc: float
    surface: list = field(repr=False)

    def surface_csv(self, path, header=""):
        with open(path, "w", newline="") as fh:
            fh.write(header)
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["pbar_kW", "plow_kW", "dpps_kW", "fuel_g", "dsoc"])
            for p in self.surface:
                writer.writerow([p.p_high / 1e3, p.p_low / 1e3, p.delta / 1e3, 1e3 * p.fuel, p.dsoc])


def cs_shoot(profile: LoadProfile, p_high, p_low, soc0, params: VehicleParams | None = None,
             fcm=None, delta_range=(-10e3, 30e3), xtol=1.0, cs_tol=1e-3):
    """Charging offset (W) that makes SOC(T) = SOC(0) for the given thresholds.

    Raises Infeasible when the depletion does not change sign over
    ``delta_range``.
    """
    params = params or VehicleParams()
    fcm = fcm or LinearFCM.from_params(params)
    cache = {}

    def depletion(delta):
        if delta not in cache:
            cache[delta] = hpts_depletion(profile, HptsParams(p_high, p_low, delta), soc0, params, fcm)
        return cache[delta]

    if depletion(0.0) == 0.0:
        return 0.0
    lo, hi = delta_range
    f_lo, f_hi = depletion(lo), depletion(hi)
    if f_lo < 0.0 or f_hi > 0.0:
        raise Infeasible(
            f"no charge-sustaining offset for thresholds ({p_high:g}, {p_low:g}) W: "
            f"depletion {f_lo:.4g} at {lo:g} W, {f_hi:.4g} at {hi:g} W")
    if f_lo == 0.0:
        return float(lo)
    if f_hi == 0.0:
        return float(hi)
    root = brentq(depletion, lo, hi, xtol=xtol)
    # depletion should fall as the offset grows
    points = sorted(cache.items())
    values = np.array([v for _, v in points])
    if np.any(np.diff(values) > 1e-12):
        raise NoConvergence("depletion is not monotone in the charging offset",
                            diagnostics={"samples": points})
    if abs(depletion(root)) > cs_tol:
        raise NoConvergence(f"offset {root:g} W leaves depletion {depletion(root):.3g}",
                            diagnostics={"samples": points})
    return float(root)


def _evaluate(args):
    profile, pair, soc0, params, fcm, spec = args
    p_high, p_low = pair
    try:
        delta = cs_shoot(profile, p_high, p_low, soc0, params, fcm, spec.delta_range, spec.xtol, spec.cs_tol)
    except (Infeasible, NoConvergence):
        return [SurfacePoint(p_high, p_low, np.nan, np.nan, np.nan)]
    traj = simulate(profile, HptsParams(p_high, p_low, delta), soc0, params, fcm)
    return [SurfacePoint(p_high, p_low, delta, traj.fuel, traj.dsoc)]


def _evaluate_sweep(args):
    profile, pair, soc0, params, fcm, spec = args
    p_high, p_low = pair
    out = []
    for delta in spec.deltas:
        traj = simulate(profile, HptsParams(p_high, p_low, float(delta)), soc0, params, fcm)
        out.append(SurfacePoint(p_high, p_low, float(delta), traj.fuel, traj.dsoc))
    return out


def tune(profile: LoadProfile, spec: TuneSpec | None = None, soc0=0.65, params: VehicleParams | None = None,
         fcm=None, workers: int | None = None) -> TuneResult:
    """Grid over threshold pairs with a CS shot per pair; least fuel wins.

    With ``spec.deltas`` set, the offset is swept on that grid instead and
    only points within the CS tolerance are eligible.  Ties go to the
    smallest engine-on threshold, then the smallest engine-off threshold.
    """
    spec = spec or TuneSpec()
    params = params or VehicleParams()
    fcm = fcm or LinearFCM.from_params(params)
    worker = _evaluate if spec.deltas is None else _evaluate_sweep
    jobs = [(profile, pair, soc0, params, fcm, spec) for pair in spec.pairs()]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            chunks = list(pool.map(worker, jobs))  # map preserves job order
    else:
        chunks = [worker(job) for job in jobs]
    surface = [p for chunk in chunks for p in chunk]
    eligible = [p for p in surface if p.feasible and abs(p.dsoc) <= spec.cs_tol]
    if not eligible:
        raise AllInfeasible("no threshold pair admits a charge-sustaining offset")
    best = min(eligible, key=lambda p: (p.fuel, p.p_high, p.p_low))
    return TuneResult(HptsParams(best.p_high, best.p_low, best.delta), best.fuel, best.dsoc, surface)


def tune_xos(profile: LoadProfile, soc0=0.65, params: VehicleParams | None = None, fcm=None):
    """Threshold for XOS closest to charge sustaining; ties broken on fuel.

    XOS has no continuous charging knob, so CS holds only to the
    granularity of the load samples.  Returns (XOS, trajectory).
    """
    params = params or VehicleParams()
    fcm = fcm or LinearFCM.from_params(params)
    loads = profile.p_pl
    candidates = np.unique(np.concatenate(([0.0], loads[(loads >= 0.0) & (loads <= params.p_ps_max)])))
    best = None
    for th in candidates:
        traj = simulate(profile, XOS(float(th)), soc0, params, fcm)
        key = (round(abs(traj.dsoc), 12), traj.fuel)
        if best is None or key < best[0]:
            best = (key, XOS(float(th)), traj)
    return best[1], best[2]
