"""Driving cycles: loading, WLTP stages, synthetic traces and load profiles."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import NonMonotonicTime, ParseError, UnknownStage
from .powertrain import VehicleParams, drive_power, load_power

# WLTC class-3b phase boundaries in seconds (low, medium, high, extra high)
WLTP_STAGES = {"L": (0, 589), "M": (589, 1022), "H": (1022, 1477), "E": (1477, 1800)}


@dataclass(frozen=True, eq=False)
class DrivingCycle:
    name: str
    dt: float
    v: np.ndarray
    theta: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, float))
        if self.theta is not None:
            object.__setattr__(self, "theta", np.asarray(self.theta, float))
            if self.theta.shape != self.v.shape:
                raise ParseError("speed and slope series differ in length")
        if self.dt <= 0:
            raise ParseError("sample period must be positive")
        if np.any(self.v < 0) or not np.all(np.isfinite(self.v)):
            raise ParseError("speeds must be finite and non-negative")

    @property
    def t(self):
        return np.arange(len(self.v)) * self.dt

    @property
    def duration(self):
        return (len(self.v) - 1) * self.dt

    def distance(self):
        return float(np.trapezoid(self.v, dx=self.dt))


@dataclass(frozen=True, eq=False)
class LoadProfile:
    """DC-link load series; step k applies ``p_pl[k]`` for ``dt`` seconds."""

    dt: float
    p_pl: np.ndarray
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "p_pl", np.asarray(self.p_pl, float))
        if self.dt <= 0:
            raise ParseError("sample period must be positive")
        if not np.all(np.isfinite(self.p_pl)):
            raise ParseError("load series must be finite")

    def __len__(self):
        return len(self.p_pl)

    @property
    def t(self):
        return np.arange(len(self.p_pl)) * self.dt

    @property
    def propulsion(self):
        """Mask of steps with non-negative load."""
        return self.p_pl >= 0.0

    @property
    def regeneration(self):
        return self.p_pl < 0.0

    def slice(self, start, stop) -> LoadProfile:
        return LoadProfile(self.dt, self.p_pl[start:stop], f"{self.name}[{start}:{stop}]")

    def to_csv(self, path, header=""):
        with open(path, "w", newline="") as fh:
            fh.write(header)
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t_s", "P_PL_W"])
            for t, p in zip(self.t, self.p_pl):
                writer.writerow([f"{t:g}", repr(float(p))])


def _read_rows(path):
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    except OSError as exc:
        raise ParseError(f"cannot read cycle {path}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: empty cycle file")
    try:
        float(rows[0][0])
    except ValueError:
        rows = rows[1:]
    try:
        data = np.array([[float(x) for x in r] for r in rows])
    except ValueError as exc:
        raise ParseError(f"{path}: non-numeric entry ({exc})") from exc
    if data.ndim != 2 or data.shape[1] not in (2, 3) or len(data) < 2:
        raise ParseError(f"{path}: expected at least two rows of t,v[,theta]")
    return data


def load_cycle(path, format: str = "csv", dt: float | None = None, name=None) -> DrivingCycle:
    """Read a ``t_s,v_mps[,theta_rad]`` CSV.

    ``format='csv_kmh'`` reads speeds in km/h.  Non-uniform time stamps are
    linearly resampled to ``dt`` (default 1 s).
    """
    if format not in ("csv", "csv_kmh"):
        raise ParseError(f"unknown cycle format {format!r}")
    data = _read_rows(path)
    t, v = data[:, 0], data[:, 1]
    if format == "csv_kmh":
        v = v / 3.6
    theta = data[:, 2] if data.shape[1] == 3 else None
    steps = np.diff(t)
    if np.any(steps <= 0):
        k = int(np.argmax(steps <= 0)) + 1
        raise NonMonotonicTime(f"{path}: time stamps not increasing at row {k}")
    uniform = np.allclose(steps, steps[0], rtol=0, atol=1e-9)
    if uniform and (dt is None or np.isclose(dt, steps[0])):
        period = float(steps[0])
    else:
        period = float(dt or 1.0)
        grid = np.arange(t[0], t[-1] + 1e-9, period)
        v = np.interp(grid, t, v)
        theta = None if theta is None else np.interp(grid, t, theta)
    return DrivingCycle(name or str(path), period, v, theta)


def wltp_cycle() -> DrivingCycle:
    """The bundled WLTC class-3b trace at 1 Hz."""
    ref = resources.files("shevem") / "data" / "wltc_class3b.csv"
    with resources.as_file(ref) as path:
        return load_cycle(path, name="WLTC-3b")


def wltp_stage(cycle: DrivingCycle, stage: str) -> DrivingCycle:
    """Sub-trace for stage L, M, H or E; boundary samples are shared."""
    key = str(stage).upper().removeprefix("WL-")
    if key not in WLTP_STAGES:
        raise UnknownStage(f"unknown WLTP stage {stage!r}; use one of L, M, H, E")
    start, stop = WLTP_STAGES[key]
    i0, i1 = int(round(start / cycle.dt)), int(round(stop / cycle.dt)) + 1
    theta = None if cycle.theta is None else cycle.theta[i0:i1]
    return DrivingCycle(f"WL-{key}", cycle.dt, cycle.v[i0:i1], theta)


def derive_load(cycle: DrivingCycle, params: VehicleParams) -> LoadProfile:
    """Load power per sample, acceleration by central differences."""
    if len(cycle.v) > 1:
        accel = np.gradient(cycle.v, cycle.dt)
    else:
        accel = np.zeros_like(cycle.v)
    theta = 0.0 if cycle.theta is None else cycle.theta
    p_drive = drive_power(cycle.v, accel, theta, params)
    v = cycle.v if params.motor_map is not None else None
    p_pl = np.atleast_1d(load_power(p_drive, params, v=v))
    return LoadProfile(cycle.dt, p_pl, cycle.name)


# Staircase load used by the analytic/DP comparisons (70 steps of 1 s, W).
PULSE_LEVELS = ((10, 6.0e3), (20, 35.0e3), (10, 20.0e3), (30, -14.0e3))


def pulse_profile() -> LoadProfile:
    """Deterministic 70-s three-level load staircase with a braking tail."""
    p = np.concatenate([np.full(n, level) for n, level in PULSE_LEVELS])
    return LoadProfile(1.0, p, "pulse")


def mixed_rural_cycle(seed: int = 1, duration: float = 1200.0, dt: float = 1.0) -> DrivingCycle:
    """Seeded blend of urban stop-and-go and rural cruising, capped at 26 m/s."""
    rng = np.random.default_rng(seed)
    n = int(round(duration / dt)) + 1
    v = np.zeros(n)
    k, speed = 0, 0.0
    while k < n - 1:
        rural = rng.random() < 0.5
        target = rng.uniform(16.0, 26.0) if rural else rng.uniform(6.0, 14.0)
        accel = rng.uniform(0.6, 1.4)
        while speed < target and k < n - 1:
            speed = min(target, speed + accel * dt)
            k += 1
            v[k] = speed
        cruise = int(rng.integers(30, 120) if rural else rng.integers(10, 40))
        for _ in range(cruise):
            if k >= n - 1:
                break
            speed = float(np.clip(speed + rng.normal(0.0, 0.15), 0.8 * target, min(26.0, 1.1 * target)))
            k += 1
            v[k] = speed
        stop = not rural or rng.random() < 0.3
        floor = 0.0 if stop else rng.uniform(6.0, 12.0)
        decel = rng.uniform(0.7, 1.5)
        while speed > floor and k < n - 1:
            speed = max(floor, speed - decel * dt)
            k += 1
            v[k] = speed
        if stop:
            idle = int(rng.integers(5, 25))
            for _ in range(idle):
                if k >= n - 1:
                    break
                k += 1
                v[k] = 0.0
    # bring the vehicle to rest by the end with a bounded deceleration
    time_left = (n - 1 - np.arange(n)) * dt
    v = np.minimum(v, 1.2 * time_left)
    return DrivingCycle(f"mixed-rural-{seed}", dt, v)


def synth_cycle(kind: str, seed: int = 1):
    """``pulse`` gives a :class:`LoadProfile`; ``mixed-rural`` a :class:`DrivingCycle`."""
    if kind == "pulse":
        return pulse_profile()
    if kind == "mixed-rural":
        return mixed_rural_cycle(seed)
    raise ParseError(f"unknown synthetic cycle {kind!r}")
