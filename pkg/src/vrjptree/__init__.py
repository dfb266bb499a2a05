"""Simulation and exact analytics for the vertex-reinforced jump process on
Galton-Watson trees and its random-walk-in-random-environment representation."""

from .exceptions import NumericalError, UsageError
from .gw_env import ROOT, SUPER_ROOT, EnvTree, OffspringLaw
from .halfline import HalflineEnv, expected_exit_time, green_function, hit_prob
from .moments import IgParams, MomentEngine, ig_sample
from .rwre import WalkConfig, estimate_exponent, estimate_speed, run_walk
from .vrjp import FixedTree, mixture_equivalence_test, simulate_vrjp, simulate_z_quenched

__version__ = "0.1.0"

__all__ = [
    "EnvTree", "FixedTree", "HalflineEnv", "IgParams", "MomentEngine", "NumericalError",
    "OffspringLaw", "ROOT", "SUPER_ROOT", "UsageError", "WalkConfig", "estimate_exponent",
    "estimate_speed", "expected_exit_time", "green_function", "hit_prob", "ig_sample",
    "mixture_equivalence_test", "run_walk", "simulate_vrjp", "simulate_z_quenched",
]
