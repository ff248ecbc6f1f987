"""Gradient-flow climbs of transition-probability control landscapes and the
straightness of the control trajectories they trace."""

from .dynamics import (
    ControlField,
    FieldParametrization,
    PropagationResult,
    SystemSpec,
    TimeGrid,
    TransitionSpec,
    gradient,
    population_dynamics,
    probability_and_gradient,
    propagate,
    random_dipole,
    sampled_gradient,
    standard_system,
    synthesize_field,
    transition_probability,
    weighted_norm,
)
from .errors import (
    ConfigError,
    DegenerateFieldError,
    DegenerateTrajectory,
    DmorphError,
    FlowStall,
    PropagationError,
    StepBudgetExceeded,
)

__version__ = "0.1.0"
