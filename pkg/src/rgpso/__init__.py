"""Particle swarm optimization with memory-based regional gradients."""

from .gradient import (
    EgsConfig,
    EvaluationArchive,
    FdConfig,
    GradientEstimate,
    WlsConfig,
    egs_gradient,
    finite_difference_gradient,
    gaussian_weights,
    normalize_direction,
    wls_regional_gradient,
)
from .objective import Evaluation, Objective, ObjectiveSpec, make_objective
from .swarm import PsoConfig, RunResult, run

__version__ = "0.1.0"
