"""Spin-model and Fock-space simulation of annealing in networks of Kerr
parametric oscillators (KPOs)."""

__version__ = "0.1.0"

from .errors import (ConfigError, ConvergenceError, IntegrityError, InvalidDimensionError,
                     InvalidParameterError, KpoError, NumericalConsistencyError,
                     StiffnessError, TruncationError)
from .model import (CouplingSpec, FockSystem, KpoSpec, NetworkSpec, ScheduleSpec, SpinSystem,
                    khz, mhz)
from .solvers import SimulationResult, evolve_master, evolve_trajectories

__all__ = [
    "ConfigError", "ConvergenceError", "CouplingSpec", "FockSystem", "IntegrityError",
    "InvalidDimensionError", "InvalidParameterError", "KpoError", "KpoSpec", "NetworkSpec",
    "NumericalConsistencyError", "ScheduleSpec", "SimulationResult", "SpinSystem",
    "StiffnessError", "TruncationError", "evolve_master", "evolve_trajectories", "khz", "mhz",
]
