"""Maximum-likelihood optimal splines for stochastic dynamical systems."""

__version__ = "0.1.0"

from .linear import solve_spline
from .model import (LinearGaussianSystem, MeasurementSet, ModelError, StochasticSystem,
                    TimeHorizon, preset_alpha_particle, preset_by_name,
                    preset_double_integrator, preset_harmonic, preset_pendulum,
                    validate_system)
from .nonlinear import solve_alpha, solve_collocation
from .optimality import verify
from .spline import Spline, eval_spline

__all__ = [
    "LinearGaussianSystem", "MeasurementSet", "ModelError", "Spline", "StochasticSystem",
    "TimeHorizon", "eval_spline", "preset_alpha_particle", "preset_by_name",
    "preset_double_integrator", "preset_harmonic", "preset_pendulum", "solve_alpha",
    "solve_collocation", "solve_spline", "validate_system", "verify",
]
