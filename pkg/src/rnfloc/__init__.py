"""Target localization in distributed MIMO radar with gradient-flow networks."""

from .errors import (DegenerateGeometryError, InvalidInputError, LocalizationError,
                     NotFoundError, SingularGeometryError)
from .radar import (MeasurementSet, NoiseModel, Scenario, bistatic_range, builtin_scenario,
                    noise_from_snr, random_circle_scenario, simulate_antenna_positions,
                    simulate_measurements)
from .solver import (SolveResult, SolverConfig, oracle_ml_estimate, solve_lpnn, solve_rnfnn,
                     solve_rnfnn_antenna)

__version__ = "0.1.0"

__all__ = [
    "DegenerateGeometryError", "InvalidInputError", "LocalizationError", "NotFoundError",
    "SingularGeometryError", "MeasurementSet", "NoiseModel", "Scenario", "bistatic_range",
    "builtin_scenario", "noise_from_snr", "random_circle_scenario", "simulate_antenna_positions",
    "simulate_measurements", "SolveResult", "SolverConfig", "oracle_ml_estimate", "solve_lpnn",
    "solve_rnfnn", "solve_rnfnn_antenna",
]
