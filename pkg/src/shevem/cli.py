"""Batch command-line front end.

Every run resolves one flat configuration (defaults, then ``--config``
file, then ``--set`` pairs, then explicit flags) and writes it as a
provenance header into each artifact.  Exit codes: 0 success, 1 numeric
failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analytic_pmp import solve_constrained
from .cycles import derive_load, load_cycle, synth_cycle, wltp_cycle, wltp_stage, LoadProfile
from .dp_solver import DpGrid, dp_solve
from .efc import cs_necessity_scan, identify_factors
from .errors import InvalidParams, ParseError, ShevError, UnknownStage
from .powertrain import (CONFIG_KEYS, LinearFCM, TabulatedFCM, VehicleParams, parse_quantity,
                         params_from_mapping, read_config, synthetic_quasilinear_fcm)
from .rulebased import ECMS, XOS, HptsParams, simulate
from .tuner import TuneSpec, tune, tune_xos

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2

# experiment key -> (dimension, default); vehicle symbols are handled separately
EXPERIMENT_KEYS = {
    "params": ("path", None),
    "cycle": ("path", None),
    "cycle_format": ("str", "csv"),
    "stage": ("str", None),
    "synth": ("str", None),
    "seed": ("int", 1),
    "controller": ("str", "hpts"),
    "fcm": ("str", "linear"),
    "soc0": ("1", 0.65),
    "socT": ("1", None),
    "sss": ("str", "penalized"),
    "p_high": ("W", 18.5e3),
    "p_low": ("W", 6.5e3),
    "delta": ("W", 9.5e3),
    "threshold": ("W", None),
    "s_d": ("1", None),
    "s_c": ("1", None),
    "n_soc": ("int", 601),
    "n_u": ("int", 301),
    "out": ("path", "out"),
    "workers": ("int", 1),
}

STAGES = ("L", "M", "H", "E")


class UsageError(ShevError):
    pass


def _convert(key, text, dim, where):
    text = str(text).strip()
    if dim in ("path", "str"):
        return text
    if dim == "int":
        try:
            return int(text)
        except ValueError as exc:
            raise ParseError(f"{where}: {key} must be an integer") from exc
    try:
        return float(text)  # bare numbers are taken as SI
    except ValueError:
        return parse_quantity(text, dim, where)


def resolve_config(args) -> tuple[dict, dict]:
    """Merge defaults, config file, ``--set`` pairs and flags.

    Returns (experiment settings, vehicle overrides as raw strings).
    """
    raw = {}
    if args.config:
        raw.update(read_config(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        raw[key] = (value, "--set")
    for key in EXPERIMENT_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = (str(value), f"--{key.replace('_', '-')}")
    settings = {key: default for key, (_, default) in EXPERIMENT_KEYS.items()}
    vehicle = {}
    for key, (value, where) in raw.items():
        if key in EXPERIMENT_KEYS:
            settings[key] = _convert(key, value, EXPERIMENT_KEYS[key][0], where)
        elif key in CONFIG_KEYS or key == "motor_map":
            vehicle[key] = (value, where)
        else:
            raise ParseError(f"{where}: unknown setting {key!r}")
    return settings, vehicle


def build_params(settings, vehicle) -> VehicleParams:
    base = VehicleParams()
    if settings["params"]:
        base = params_from_mapping(read_config(settings["params"]))
    return params_from_mapping(vehicle, base)


def build_fcm(settings, params):
    kind = settings["fcm"]
    if kind == "linear":
        return LinearFCM.from_params(params)
    if kind == "synthetic":
        return synthetic_quasilinear_fcm(params)
    path = Path(kind)
    if not path.exists():
        raise ParseError(f"fuel map {kind!r} is neither 'linear', 'synthetic' nor an existing file")
    return TabulatedFCM.from_csv(path)


def build_profile(settings, params) -> LoadProfile:
    sources = [k for k in ("cycle", "stage", "synth") if settings[k]]
    if len(sources) != 1:
        raise UsageError("choose exactly one cycle source: --cycle, --stage or --synth")
    if settings["cycle"]:
        path = Path(settings["cycle"])
        if not path.exists():
            raise ParseError(f"cycle file {path} does not exist")
        return derive_load(load_cycle(path, settings["cycle_format"]), params)
    if settings["stage"]:
        return derive_load(wltp_stage(wltp_cycle(), settings["stage"]), params)
    made = synth_cycle(settings["synth"], settings["seed"])
    return made if isinstance(made, LoadProfile) else derive_load(made, params)


def provenance(settings, params, command) -> dict:
    return {"tool": "shevem", "version": __version__, "command": command,
            "settings": settings, "vehicle_si": params.as_config()}


def header(prov) -> str:
    return "# " + json.dumps(prov, sort_keys=True) + "\n"


def _write_json(path, data, prov):
    data = dict(data, provenance=prov)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=float)


def _outdir(settings) -> Path:
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _grid(settings):
    return DpGrid(n_soc=settings["n_soc"], n_u=settings["n_u"])


def _soc_t(settings):
    return settings["soc0"] if settings["socT"] is None else settings["socT"]


def run_controller(profile, name, settings, params, fcm):
    """Trajectory for one controller name."""
    soc0 = settings["soc0"]
    if name == "hpts":
        hp = HptsParams(settings["p_high"], settings["p_low"], settings["delta"])
        return simulate(profile, hp, soc0, params, fcm)
    if name == "hpts-tuned":
        best = tune(profile, TuneSpec(), soc0, params, fcm)
        traj = simulate(profile, best.hp, soc0, params, fcm)
        traj.meta["hpts_kW"] = best.hp.kw
        return traj
    if name == "xos":
        if settings["threshold"] is None:
            xos, traj = tune_xos(profile, soc0, params, fcm)
            traj.meta["threshold_kW"] = xos.threshold / 1e3
            return traj
        return simulate(profile, XOS(settings["threshold"]), soc0, params, fcm)
    if name == "ecms":
        aq = params.alpha_f * params.q_hv
        s_d = aq if settings["s_d"] is None else settings["s_d"]
        s_c = aq if settings["s_c"] is None else settings["s_c"]
        return simulate(profile, ECMS(s_d, s_c), soc0, params, fcm)
    if name == "dp":
        traj = dp_solve(profile, soc0, _soc_t(settings), settings["sss"], _grid(settings), params, fcm)
        traj.meta.pop("solver", None)
        return traj
    if name == "pmp":
        if not isinstance(fcm, LinearFCM):
            raise UsageError("the analytic solution needs the linear fuel map")
        sss = "lossless" if settings["sss"] == "lossless" else "off"
        return solve_constrained(profile, soc0, _soc_t(settings), sss, params).to_trajectory(params)
    raise UsageError(f"unknown controller {name!r}")


def _artifacts(traj, out, stem, prov, extra=None):
    traj.to_csv(out / f"{stem}.csv", header(prov))
    extra = dict(extra or {})
    extra.update({k: v for k, v in traj.meta.items() if isinstance(v, (int, float, str, tuple, list))})
    summary = traj.summary()
    summary.update(extra)
    _write_json(out / f"{stem}_summary.json", summary, prov)


def cmd_simulate(args):
    settings, vehicle = resolve_config(args)
    params = build_params(settings, vehicle)
    fcm = build_fcm(settings, params)
    profile = build_profile(settings, params)
    prov = provenance(settings, params, "simulate")
    traj = run_controller(profile, settings["controller"], settings, params, fcm)
    out = _outdir(settings)
    _artifacts(traj, out, "trajectory", prov)
    print(json.dumps(traj.summary(), sort_keys=True))
    return EXIT_OK


def cmd_dp(args):
    settings, vehicle = resolve_config(args)
    params = build_params(settings, vehicle)
    fcm = build_fcm(settings, params)
    profile = build_profile(settings, params)
    prov = provenance(settings, params, "dp")
    traj = dp_solve(profile, settings["soc0"], _soc_t(settings), settings["sss"], _grid(settings),
                    params, fcm)
    solver = traj.meta.pop("solver")
    out = _outdir(settings)
    _artifacts(traj, out, "dp_trajectory", prov)
    if args.value_slice is not None:
        values = solver.value_slice(args.value_slice)
        with open(out / "V.csv", "w") as fh:
            fh.write(header(prov))
            fh.write("SOC,V_prev_off_kg,V_prev_on_kg\n")
            for soc, v0, v1 in zip(solver.nodes, values[0], values[1]):
                fh.write(f"{soc!r},{v0!r},{v1!r}\n")
    print(json.dumps(traj.summary(), sort_keys=True))
    return EXIT_OK


def _benchmark_cell(job):
    stage, k_value, name, settings, params, fcm_kind = job
    params = params.with_(k_restart=k_value)
    cell = dict(settings, fcm=fcm_kind)
    fcm = build_fcm(cell, params)
    row = {"stage": stage, "K_s": k_value, "controller": name}
    try:
        profile = derive_load(wltp_stage(wltp_cycle(), stage), params)
        traj = run_controller(profile, name, cell, params, fcm)
        row.update(fuel_g=traj.fuel_g, dsoc=traj.dsoc, n_restarts=traj.restarts, status="ok")
    except ShevError as exc:
        row.update(fuel_g=np.nan, dsoc=np.nan, n_restarts=-1, status=f"failed: {type(exc).__name__}")
    return row


def cmd_benchmark(args):
    settings, vehicle = resolve_config(args)
    params = build_params(settings, vehicle)
    stages = [s.strip().upper() for s in args.stages.split(",") if s.strip()]
    controllers = [c.strip() for c in args.controllers.split(",") if c.strip()]
    k_values = [float(k) for k in args.k_values.split(",") if k.strip()] if args.k_values else [params.k_restart]
    for stage in stages:
        if stage not in STAGES:
            raise UnknownStage(f"unknown WLTP stage {stage!r}")
    jobs = [(st, k, c, settings, params, settings["fcm"]) for st in stages for k in k_values for c in controllers]
    if not jobs:
        raise UsageError("benchmark matrix is empty")
    if settings["workers"] > 1:
        with ProcessPoolExecutor(settings["workers"]) as pool:
            rows = list(pool.map(_benchmark_cell, jobs))  # matrix order, not completion order
    else:
        rows = [_benchmark_cell(job) for job in jobs]
    dp_fuel = {(r["stage"], r["K_s"]): r["fuel_g"] for r in rows if r["controller"] == "dp"}
    for r in rows:
        ref = dp_fuel.get((r["stage"], r["K_s"]), np.nan)
        r["pct_vs_dp"] = 100.0 * (r["fuel_g"] - ref) / ref if np.isfinite(ref) else np.nan
    prov = provenance(settings, params, "benchmark")
    out = _outdir(settings)
    cols = ["stage", "K_s", "controller", "fuel_g", "pct_vs_dp", "dsoc", "n_restarts", "status"]
    with open(out / "benchmark.csv", "w") as fh:
        fh.write(header(prov))
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(str(r[c]) for c in cols) + "\n")
    if len(k_values) > 1:
        for c in controllers:
            for st in stages:
                with open(out / f"ksweep_{st}_{c}.csv", "w") as fh:
                    fh.write(header(prov))
                    fh.write("K_s,fuel_g\n")
                    for r in rows:
                        if r["stage"] == st and r["controller"] == c:
                            fh.write(f"{r['K_s']},{r['fuel_g']}\n")
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} rows written to {out / 'benchmark.csv'} ({failed} failed)")
    return EXIT_NUMERIC if failed == len(rows) else EXIT_OK


def cmd_tune(args):
    settings, vehicle = resolve_config(args)
    params = build_params(settings, vehicle)
    fcm = build_fcm(settings, params)
    profile = build_profile(settings, params)
    kw = {}
    if args.sweep3d:
        kw["deltas"] = tuple(np.arange(-10e3, 30e3 + 1.0, args.delta_step * 1e3))
    spec = TuneSpec(**kw)
    result = tune(profile, spec, settings["soc0"], params, fcm, workers=settings["workers"])
    prov = provenance(settings, params, "tune")
    out = _outdir(settings)
    result.surface_csv(out / "surface.csv", header(prov))
    p_high, p_low, delta = result.hp.kw
    _write_json(out / "optimum.json", {"cycle": profile.name, "pbar_kW": p_high, "plow_kW": p_low,
                                       "dpps_kW": delta, "fuel_g": 1e3 * result.fuel, "dsoc": result.dsoc}, prov)
    print(f"P_high {p_high:.2f} kW, P_low {p_low:.2f} kW, offset {delta:.2f} kW, fuel {1e3 * result.fuel:.2f} g")
    return EXIT_OK


def cmd_efc(args):
    settings, vehicle = resolve_config(args)
    params = build_params(settings, vehicle)
    fcm = build_fcm(settings, params)
    profile = build_profile(settings, params)
    factors = identify_factors(profile, settings["soc0"], params, fcm)
    prov = provenance(settings, params, "efc")
    out = _outdir(settings)
    data = {"cycle": factors.cycle, "S_d": factors.s_d, "S_c": factors.s_c, "du": factors.du,
            "du_d": factors.du_d, "du_c": factors.du_c, "r2_d": factors.r2_d, "r2_c": factors.r2_c}
    data.update(factors.bound_report(params))
    _write_json(out / "factors.json", data, prov)
    with open(out / "efc_sweep.csv", "w") as fh:
        fh.write(header(prov))
        fh.write("branch,u_efc,E_e_J,E_f_J\n")
        for side, sweep in factors.sweep.items():
            for u, e_e, e_f in zip(sweep["u"], sweep["E_e"], sweep["E_f"]):
                fh.write(f"{side},{u!r},{e_e!r},{e_f!r}\n")
    print(json.dumps(data, sort_keys=True))
    return EXIT_OK


def cmd_cs_scan(args):
    settings, vehicle = resolve_config(args)
    params = build_params(settings, vehicle)
    fcm = build_fcm(settings, params)
    profile = build_profile(settings, params)
    step = args.ladder_step
    offsets = tuple(step * np.arange(-args.ladder_half, args.ladder_half + 1))
    scan = cs_necessity_scan(profile, settings["soc0"], params, offsets, grid=_grid(settings), fcm=fcm,
                             sss=settings["sss"])
    prov = provenance(settings, params, "cs-scan")
    out = _outdir(settings)
    scan.to_csv(out / "cs_scan.csv", header(prov))
    best = scan.best
    print(f"minimum EFC {1e3 * best.m_efc:.3f} g at socT {best.soc_t:.4f} (dSOC {best.depletion:+.2e})")
    return EXIT_OK


def _common(p):
    p.add_argument("--config", help="key = value file (experiment and vehicle keys)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--params", help="vehicle parameter file")
    p.add_argument("--cycle", help="speed trace CSV (t_s,v_mps[,theta_rad])")
    p.add_argument("--cycle-format", choices=("csv", "csv_kmh"))
    p.add_argument("--stage", help="WLTP stage L, M, H or E")
    p.add_argument("--synth", choices=("pulse", "mixed-rural"))
    p.add_argument("--seed", type=int)
    p.add_argument("--fcm", help="linear, synthetic or a fuel-map CSV path")
    p.add_argument("--soc0", help="initial SOC")
    p.add_argument("--socT", help="terminal SOC (defaults to the initial SOC)")
    p.add_argument("--sss", choices=("off", "lossless", "penalized"), help="start-stop model")
    p.add_argument("--n-soc", dest="n_soc", type=int)
    p.add_argument("--n-u", dest="n_u", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="shevem", description="Series-HEV energy-management batch runs.",
                                     allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"shevem {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one controller over one cycle", allow_abbrev=False)
    _common(p)
    p.add_argument("--controller", choices=("hpts", "hpts-tuned", "xos", "ecms", "dp", "pmp"))
    p.add_argument("--p-high", dest="p_high", help="HPTS engine-on threshold, e.g. '18.5 kW'")
    p.add_argument("--p-low", dest="p_low", help="HPTS engine-off threshold")
    p.add_argument("--delta", help="HPTS charging offset")
    p.add_argument("--threshold", help="XOS threshold (tuned for CS when omitted)")
    p.add_argument("--s-d", dest="s_d", help="ECMS discharge factor")
    p.add_argument("--s-c", dest="s_c", help="ECMS charge factor")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dp", help="dynamic-programming benchmark", allow_abbrev=False)
    _common(p)
    p.add_argument("--value-slice", type=int, help="also dump the value function at this step to V.csv")
    p.set_defaults(func=cmd_dp)

    p = sub.add_parser("benchmark", help="WLTP stages x controllers (x K) table", allow_abbrev=False)
    _common(p)
    p.add_argument("--stages", default="L,M,H,E")
    p.add_argument("--controllers", default="dp,xos,hpts-tuned")
    p.add_argument("--k-values", help="comma-separated restart coefficients in s, e.g. 0,0.25,0.5")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("tune", help="charge-sustaining HPTS tuning", allow_abbrev=False)
    _common(p)
    p.add_argument("--sweep3d", action="store_true", help="sweep the offset on a grid instead of shooting")
    p.add_argument("--delta-step", type=float, default=0.5, help="offset grid step in kW for --sweep3d")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("efc", help="identify equivalence factors", allow_abbrev=False)
    _common(p)
    p.set_defaults(func=cmd_efc)

    p = sub.add_parser("cs-scan", help="EFC of DP optima over a terminal-SOC ladder", allow_abbrev=False)
    _common(p)
    p.add_argument("--ladder-step", type=float, default=0.005)
    p.add_argument("--ladder-half", type=int, default=2, help="rungs on each side of the initial SOC")
    p.set_defaults(func=cmd_cs_scan)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ParseError, InvalidParams, UnknownStage, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ShevError as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
