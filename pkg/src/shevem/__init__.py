"""Series-HEV energy-management toolkit.

Powertrain model, closed-form costate solutions, a dynamic-programming
benchmark, rule-based controllers with a charge-sustaining tuner, and
equivalent-fuel-consumption tools.
"""

__version__ = "0.1.0"

from .powertrain import VehicleParams, LinearFCM, TabulatedFCM, load_params  # noqa: E402
from .cycles import LoadProfile, DrivingCycle, wltp_cycle, wltp_stage, derive_load, synth_cycle  # noqa: E402
from .trajectory import Trajectory, count_switches  # noqa: E402
from .analytic_pmp import regime_boundaries, shoot_costate, solve_constrained, sss_thresholds  # noqa: E402
from .dp_solver import DpGrid, dp_solve  # noqa: E402
from .rulebased import ECMS, XOS, HptsParams, simulate  # noqa: E402
from .tuner import TuneSpec, cs_shoot, tune, tune_xos  # noqa: E402
from .efc import EquivalenceFactors, cs_necessity_scan, efc_of, identify_factors  # noqa: E402
