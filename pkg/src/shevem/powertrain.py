"""Series-HEV powertrain: vehicle, battery and fuel models.

Everything here works in SI units (W, J, kg, C, s, V).  Human-facing units
(g, kW, Ah) appear only in config files and reports.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import DiscriminantNegative, InvalidParams, ParseError, PowerOutOfRange

# unit string -> (factor to SI, dimension tag)
UNITS = {
    "": (1.0, "1"),
    "-": (1.0, "1"),
    "%": (0.01, "1"),
    "kg": (1.0, "kg"),
    "g": (1e-3, "kg"),
    "N*s^2/m^2": (1.0, "kg/m"),
    "kg/m": (1.0, "kg/m"),
    "m/s^2": (1.0, "m/s^2"),
    "m": (1.0, "m"),
    "kg/s": (1.0, "kg/s"),
    "g/s": (1e-3, "kg/s"),
    "kg/J": (1.0, "kg/J"),
    "g/kW/s": (1e-6, "kg/J"),
    "g/kWh": (1e-3 / 3.6e6, "kg/J"),
    "C": (1.0, "C"),
    "Ah": (3600.0, "C"),
    "Ohm": (1.0, "Ohm"),
    "V": (1.0, "V"),
    "W": (1.0, "W"),
    "kW": (1e3, "W"),
    "s": (1.0, "s"),
    "J/kg": (1.0, "J/kg"),
    "MJ/kg": (1e6, "J/kg"),
}

# config key (Table-I style symbol) -> (field name, dimension tag)
CONFIG_KEYS = {
    "m": ("mass", "kg"),
    "f_T": ("f_roll", "1"),
    "f_D": ("f_drag", "kg/m"),
    "g": ("gravity", "m/s^2"),
    "eta_t": ("eta_t", "1"),
    "eta_i": ("eta_i", "1"),
    "eta_r": ("eta_r", "1"),
    "eta_dc": ("eta_dc", "1"),
    "eta_m": ("eta_m", "1"),
    "g_t": ("gear_ratio", "1"),
    "r_w": ("wheel_radius", "m"),
    "q_f0": ("q_f0", "kg/s"),
    "alpha_f": ("alpha_f", "kg/J"),
    "Q_max": ("q_max", "C"),
    "R_b": ("r_b", "Ohm"),
    "V_oc": ("v_oc", "V"),
    "SOC_min": ("soc_min", "1"),
    "SOC_max": ("soc_max", "1"),
    "P_SS_min": ("p_ss_min", "W"),
    "P_SS_max": ("p_ss_max", "W"),
    "P_PS_max": ("p_ps_max", "W"),
    "K": ("k_restart", "s"),
    "q_HV": ("q_hv", "J/kg"),
}


@dataclass(frozen=True)
class MotorMap:
    """Tabulated motor/generator efficiency over (speed, |torque|)."""

    speed: np.ndarray  # rad/s, ascending
    torque: np.ndarray  # N*m, ascending, non-negative
    efficiency: np.ndarray  # shape (len(speed), len(torque))

    def __post_init__(self):
        interp = RegularGridInterpolator(
            (self.speed, self.torque), self.efficiency, bounds_error=False, fill_value=None
        )
        object.__setattr__(self, "_interp", interp)

    def __call__(self, speed, torque):
        speed = np.clip(np.asarray(speed, float), self.speed[0], self.speed[-1])
        torque = np.clip(np.abs(np.asarray(torque, float)), self.torque[0], self.torque[-1])
        pts = np.stack(np.broadcast_arrays(speed, torque), axis=-1)
        eff = self._interp(pts)
        return np.clip(eff, 1e-3, 1.0)

    @classmethod
    def from_csv(cls, path):
        """Read a long-format CSV with columns speed_rad_s, torque_Nm, efficiency."""
        try:
            data = np.genfromtxt(path, delimiter=",", names=True)
            speed = np.unique(data["speed_rad_s"])
            torque = np.unique(data["torque_Nm"])
        except (ValueError, OSError) as exc:
            raise ParseError(f"cannot read motor map {path}: {exc}") from exc
        if len(data) != len(speed) * len(torque):
            raise ParseError(f"motor map {path} is not a full rectangular grid")
        eff = np.empty((len(speed), len(torque)))
        i = np.searchsorted(speed, data["speed_rad_s"])
        j = np.searchsorted(torque, data["torque_Nm"])
        eff[i, j] = data["efficiency"]
        return cls(speed, torque, eff)


@dataclass(frozen=True)
class VehicleParams:
    """Vehicle, battery and engine constants, all in SI.

    Defaults reproduce the published parameter table with the unit
    conversions applied (0.12 g/s idle, 0.05974 g/kJ, 5 Ah, ...).
    ``wheel_radius`` is only consulted when a motor map is attached.
    """

    mass: float = 1500.0
    f_roll: float = 0.01
    f_drag: float = 0.47
    gravity: float = 9.81
    eta_t: float = 0.96
    eta_i: float = 0.96
    eta_r: float = 0.96
    eta_dc: float = 0.96
    eta_m: float = 0.90
    gear_ratio: float = 10.0
    wheel_radius: float = 0.3
    q_f0: float = 0.12e-3
    alpha_f: float = 0.05974e-6
    q_max: float = 5 * 3600.0
    r_b: float = 0.2056
    v_oc: float = 300.0
    soc_min: float = 0.5
    soc_max: float = 0.8
    p_ss_min: float = -15e3
    p_ss_max: float = 30e3
    p_ps_max: float = 70e3
    k_restart: float = 0.8
    q_hv: float = 42.5e6
    motor_map: MotorMap | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        for name in ("eta_t", "eta_i", "eta_r", "eta_dc", "eta_m"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise InvalidParams(f"{name}={value} must lie in (0, 1]")
        if not 0.0 < self.soc_min < self.soc_max < 1.0:
            raise InvalidParams("need 0 < SOC_min < SOC_max < 1")
        if not self.p_ss_min < 0.0 < self.p_ss_max:
            raise InvalidParams("need P_SS_min < 0 < P_SS_max")
        if self.p_ps_max <= 0.0:
            raise InvalidParams("P_PS_max must be positive")
        if self.p_ss_max >= self.v_oc**2 * self.eta_dc / (4.0 * self.r_b):
            raise InvalidParams("P_SS_max exceeds the battery's deliverable power")
        if self.k_restart < 0.0 or self.q_f0 <= 0.0 or self.alpha_f <= 0.0:
            raise InvalidParams("need K >= 0, q_f0 > 0, alpha_f > 0")
        if self.mass <= 0.0 or self.q_max <= 0.0 or self.r_b <= 0.0 or self.v_oc <= 0.0:
            raise InvalidParams("mass, Q_max, R_b and V_oc must be positive")

    @property
    def restart_fuel(self) -> float:
        """Fuel mass charged per engine restart, K * q_f0 (kg)."""
        return self.k_restart * self.q_f0

    @property
    def p_b_max(self) -> float:
        return self.v_oc**2 / (4.0 * self.r_b)

    def with_(self, **changes) -> VehicleParams:
        return replace(self, **changes)

    def as_config(self) -> dict:
        """Flat SI dict keyed by config symbol, for provenance headers."""
        return {key: getattr(self, name) for key, (name, _) in CONFIG_KEYS.items()}


def parse_quantity(text: str, dim: str, where: str = "") -> float:
    parts = text.split(None, 1)
    try:
        value = float(parts[0])
    except (IndexError, ValueError) as exc:
        raise ParseError(f"{where}: cannot parse number from {text!r}") from exc
    unit = parts[1].strip() if len(parts) > 1 else ""
    if unit not in UNITS:
        raise ParseError(f"{where}: unknown unit {unit!r}")
    factor, unit_dim = UNITS[unit]
    if unit_dim != dim:
        raise ParseError(f"{where}: unit {unit!r} is not a {dim} quantity")
    return value * factor


def read_config(path) -> dict:
    """Read a flat ``key = value unit`` file into a raw string mapping."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected 'key = value [unit]'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = (value, f"{path}:{lineno}")
    return out


def params_from_mapping(raw: dict, base: VehicleParams | None = None) -> VehicleParams:
    """Build parameters from ``{symbol: "value unit"}``; unknown symbols are errors."""
    changes = {}
    motor_map = None
    for key, value in raw.items():
        where = key
        if isinstance(value, tuple):
            value, where = value
        if key == "motor_map":
            motor_map = MotorMap.from_csv(value)
            continue
        if key not in CONFIG_KEYS:
            raise ParseError(f"{where}: unknown vehicle parameter {key!r}")
        name, dim = CONFIG_KEYS[key]
        changes[name] = parse_quantity(str(value), dim, where)
    if motor_map is not None:
        changes["motor_map"] = motor_map
    return replace(base or VehicleParams(), **changes)


def load_params(path) -> VehicleParams:
    return params_from_mapping(read_config(path))


# --- load side ---------------------------------------------------------------


def drive_power(v, a, theta, params: VehicleParams):
    """Wheel power needed to follow (v, a) on a slope theta (rad)."""
    v = np.asarray(v, float)
    m, g = params.mass, params.gravity
    force = m * a + params.f_roll * m * g + params.f_drag * v**2 + m * g * np.sin(theta)
    return v * force


def motor_efficiency(p_drive, v, params: VehicleParams):
    if params.motor_map is None:
        return np.full(np.shape(p_drive), params.eta_m) if np.ndim(p_drive) else params.eta_m
    omega = np.asarray(v, float) * params.gear_ratio / params.wheel_radius
    omega_safe = np.maximum(omega, 1e-6)
    torque = np.asarray(p_drive, float) / omega_safe
    return params.motor_map(omega, torque)


def load_power(p_drive, params: VehicleParams, v=None):
    """DC-link power drawn (or returned) by the propulsion branch.

    Traction divides by the drivetrain efficiency chain; braking multiplies
    by it and is clamped at the battery's charge limit, the surplus going to
    the friction brakes.
    """
    p_drive = np.asarray(p_drive, float)
    eta_m = params.eta_m if v is None else motor_efficiency(p_drive, v, params)
    chain = params.eta_i * eta_m * params.eta_t
    out = np.where(
        p_drive >= 0.0, p_drive / chain, np.maximum(p_drive * chain, params.p_ss_min)
    )
    return float(out) if out.ndim == 0 else out


# --- battery -----------------------------------------------------------------


def battery_power(p_ss, params: VehicleParams):
    """Terminal power of the cells for a DC-link power ``p_ss``."""
    p_ss = np.asarray(p_ss, float)
    return np.where(p_ss >= 0.0, p_ss / params.eta_dc, p_ss * params.eta_dc)


def battery_current(p_ss, params: VehicleParams):
    p_b = battery_power(p_ss, params)
    disc = params.v_oc**2 - 4.0 * p_b * params.r_b
    if np.any(disc < 0.0):
        raise DiscriminantNegative(
            f"battery power {np.max(p_b):.1f} W exceeds V_oc^2/(4 R_b) = {params.p_b_max:.1f} W"
        )
    # rationalised root avoids cancellation near P_b = 0
    current = 2.0 * p_b / (params.v_oc + np.sqrt(disc))
    return float(current) if current.ndim == 0 else current


def soc_rate(p_ss, params: VehicleParams):
    """dSOC/dt (1/s) for DC-link battery power ``p_ss``."""
    return -battery_current(p_ss, params) / params.q_max


def power_for_soc_rate(rate, params: VehicleParams):
    """Inverse of :func:`soc_rate` on its monotone branch."""
    current = -np.asarray(rate, float) * params.q_max
    if np.any(current > params.v_oc / (2.0 * params.r_b)):
        raise DiscriminantNegative("requested discharge rate is beyond peak battery power")
    p_b = params.v_oc * current - params.r_b * current**2
    out = np.where(p_b >= 0.0, p_b * params.eta_dc, p_b / params.eta_dc)
    return float(out) if out.ndim == 0 else out


# --- fuel models ---------------------------------------------------------------


@dataclass(frozen=True)
class LinearFCM:
    """Affine fuel map: idle flow plus a constant marginal fuel per joule."""

    q_f0: float
    alpha_f: float
    label: str = "linear"

    @classmethod
    def from_params(cls, params: VehicleParams) -> LinearFCM:
        return cls(params.q_f0, params.alpha_f)

    def __call__(self, p_ps, s):
        return self.q_f0 * np.asarray(s, float) + self.alpha_f * np.asarray(p_ps, float)


@dataclass(frozen=True)
class TabulatedFCM:
    """Fuel flow interpolated from a (P_PS, mdot) table while the engine runs."""

    power: np.ndarray
    rate: np.ndarray
    label: str = "tabulated"

    def __post_init__(self):
        if len(self.power) < 2 or np.any(np.diff(self.power) <= 0):
            raise InvalidParams("fuel table power column must be strictly increasing")

    def __call__(self, p_ps, s):
        p_ps = np.asarray(p_ps, float)
        on = np.interp(p_ps, self.power, self.rate)
        return np.where(np.asarray(s) > 0, on, 0.0)

    @classmethod
    def from_csv(cls, path, label=None) -> TabulatedFCM:
        try:
            with open(path, newline="") as fh:
                rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
            body = rows[1:] if not _is_number(rows[0][0]) else rows
            table = np.array([[float(x) for x in r[:2]] for r in body])
        except (OSError, ValueError, IndexError) as exc:
            raise ParseError(f"cannot read fuel table {path}: {exc}") from exc
        return cls(table[:, 0], table[:, 1], label or Path(path).stem)


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def synthetic_quasilinear_fcm(
    params: VehicleParams, bulge: float = 0.08, center: float = 8e3, width: float = 7e3, n: int = 141
) -> TabulatedFCM:
    """SYNTHETIC stand-in for a measured quasilinear engine-branch fuel curve.

    The linear map multiplied by ``1 + bulge * exp(-((P - center) / width)^2)``:
    poorer efficiency at low output power, identical to the linear map at high
    power.  It is not data from any real engine.
    """
    power = np.linspace(0.0, params.p_ps_max, n)
    base = params.q_f0 + params.alpha_f * power
    rate = base * (1.0 + bulge * np.exp(-(((power - center) / width) ** 2)))
    return TabulatedFCM(power, rate, label="synthetic-quasilinear")


def fuel_rate(p_ps, s, fcm, p_ps_max: float | None = None, tol: float = 1e-9):
    """Fuel mass flow (kg/s); validates the operating point first."""
    p_arr = np.asarray(p_ps, float)
    s_arr = np.asarray(s)
    upper = np.inf if p_ps_max is None else p_ps_max
    if np.any(p_arr < -tol) or np.any(p_arr > upper + tol):
        raise PowerOutOfRange(f"P_PS outside [0, {upper}] W")
    if np.any((s_arr == 0) & (np.abs(p_arr) > tol)):
        raise PowerOutOfRange("engine is off but P_PS is non-zero")
    out = fcm(p_arr, s_arr)
    return float(out) if np.ndim(out) == 0 else out


# --- hybrid state update -------------------------------------------------------


@dataclass(frozen=True)
class PowertrainState:
    soc: float
    s: int = 0
    m_f: float = 0.0
    n_r: int = 0
    t: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.soc <= 1.0:
            raise InvalidParams(f"SOC {self.soc} outside [0, 1]")
        if self.s not in (0, 1) or self.n_r < 0:
            raise InvalidParams("engine state must be 0/1 and restart count non-negative")


def step(state: PowertrainState, p_ps, p_ss, u_s: int, dt: float, params: VehicleParams, fcm=None):
    """Advance one explicit-Euler step.

    The engine switch ``u_s`` in {-1, 0, 1} is applied first; a 0->1 jump
    adds the restart fuel.  Flow then runs for ``dt`` in the new state.
    """
    if dt <= 0.0:
        raise InvalidParams("dt must be positive")
    s_new = state.s + int(u_s)
    if s_new not in (0, 1):
        raise InvalidParams(f"switch {u_s} from engine state {state.s}")
    fcm = fcm or LinearFCM.from_params(params)
    m_f, n_r = state.m_f, state.n_r
    if state.s == 0 and s_new == 1:
        m_f += params.restart_fuel
        n_r += 1
    m_f += fuel_rate(p_ps, s_new, fcm, params.p_ps_max) * dt
    soc = state.soc + soc_rate(p_ss, params) * dt
    return PowertrainState(soc=float(soc), s=s_new, m_f=float(m_f), n_r=n_r, t=state.t + dt)


def round_trip_loss(dsoc: float, params: VehicleParams, dt: float = 1.0) -> float:
    """DC-link energy lost charging by ``dsoc`` in ``dt`` and discharging it back."""
    rate = dsoc / dt
    p_charge = power_for_soc_rate(rate, params)
    p_discharge = power_for_soc_rate(-rate, params)
    return float(-(p_charge + p_discharge) * dt)


def isclose_power(a, b, tol=1e-9):
    return math.isclose(a, b, abs_tol=tol)
