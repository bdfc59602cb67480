"""Learning the steady-state Kalman gain by policy optimization.

The filter gain ``L`` is treated as a policy; its steady-state prediction
error ``J(L)`` is minimized by gradient descent with exact gradients or by
stochastic gradient descent from measurement data alone.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ConvergenceError,
    DualKFError,
    InputError,
    InstabilityError,
    NumericalError,
    ParameterError,
    StepFailureError,
)
from .kalman import dare_gain, filter_rollout
from .objective import GainPolicy, cost, exact_gradient
from .optimizer import CostOracle, StepPolicy, gd_run, gf_run, initial_gain, sgd_ensemble, sgd_run
from .sysmodel import PublicModel, SystemModel, TrajectorySource, mass_spring_model

__all__ = [
    "__version__",
    "ConfigError",
    "ConvergenceError",
    "CostOracle",
    "DualKFError",
    "GainPolicy",
    "InputError",
    "InstabilityError",
    "NumericalError",
    "ParameterError",
    "PublicModel",
    "StepFailureError",
    "StepPolicy",
    "SystemModel",
    "TrajectorySource",
    "cost",
    "dare_gain",
    "exact_gradient",
    "filter_rollout",
    "gd_run",
    "gf_run",
    "initial_gain",
    "mass_spring_model",
    "sgd_ensemble",
    "sgd_run",
]
