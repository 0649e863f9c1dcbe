"""Independent reference solvers used by the tests."""

import numpy as np

from shevem.cycles import LoadProfile
from shevem.dp_solver import DpGrid
from shevem.powertrain import LinearFCM, VehicleParams, power_for_soc_rate, soc_rate

ORACLE_DT = 60.0
ORACLE_NODES = 11


def oracle_instance(seed, params: VehicleParams):
    """Small problem whose every transition lands exactly on a SOC node.

    Controls are built from integer numbers of SOC cells per step, so the
    grid solver never interpolates and must match exhaustive search.
    """
    rng = np.random.default_rng(seed)
    cell = (params.soc_max - params.soc_min) / (ORACLE_NODES - 1)
    rate_per_cell = cell / ORACLE_DT
    n = int(rng.integers(1, 9))
    loads, controls = [], []
    for _ in range(n):
        j = int(rng.integers(-1, 3))
        loads.append(float(power_for_soc_rate(-j * rate_per_cell, params)))
        cells = np.arange(-3, j + 1)
        pick = rng.choice(cells, size=min(5, len(cells)), replace=False)
        controls.append(np.sort(np.array([float(power_for_soc_rate(-c * rate_per_cell, params)) for c in pick])))
    nodes = np.linspace(params.soc_min, params.soc_max, ORACLE_NODES)
    soc0 = float(nodes[rng.integers(0, ORACLE_NODES)])
    soc_t = float(nodes[rng.integers(0, ORACLE_NODES)])
    mode = ["off", "lossless", "penalized"][int(rng.integers(0, 3))]
    k_restart = [0.0, 0.8, 2.0][int(rng.integers(0, 3))]
    profile = LoadProfile(ORACLE_DT, np.array(loads), f"oracle-{seed}")
    grid = DpGrid(n_soc=ORACLE_NODES, n_u=5, band=1e-9)
    return profile, controls, soc0, soc_t, mode, k_restart, grid


def brute_force(profile, controls, soc0, soc_t, mode, params: VehicleParams, k_restart, band=1e-9):
    """Minimum fuel over every control sequence; ``inf`` when none is feasible.

    All sequences are enumerated at once as rows of an index matrix.
    """
    fcm = LinearFCM.from_params(params)
    penalty = k_restart * params.q_f0 if mode == "penalized" else 0.0
    dt = profile.dt
    engine, fuel, dsoc = [], [], []
    for k, p_pl in enumerate(profile.p_pl):
        options = [(1, float(u)) for u in controls[k]]
        if mode != "off" and params.p_ss_min <= p_pl <= params.p_ss_max:
            options.append((0, float(p_pl)))
        engine.append(np.array([s for s, _ in options]))
        fuel.append(np.array([float(fcm(p_pl - u, s)) * dt if s else 0.0 for s, u in options]))
        dsoc.append(np.array([float(soc_rate(u, params)) * dt for _, u in options]))
    shape = tuple(len(e) for e in engine)
    index = np.stack(np.unravel_index(np.arange(int(np.prod(shape))), shape), axis=1)
    prev = np.full(len(index), 0 if mode != "off" else 1)
    total = np.zeros(len(index))
    soc = np.full(len(index), soc0)
    ok = np.ones(len(index), dtype=bool)
    for k in range(len(shape)):
        s = engine[k][index[:, k]]
        total = total + fuel[k][index[:, k]] + np.where((s == 1) & (prev == 0), penalty, 0.0)
        soc = soc + dsoc[k][index[:, k]]
        ok &= (soc >= params.soc_min - 1e-9) & (soc <= params.soc_max + 1e-9)
        prev = s
    ok &= np.abs(soc - soc_t) <= band + 1e-12
    return float(total[ok].min()) if ok.any() else np.inf
