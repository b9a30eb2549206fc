"""Relaxed forward-backward solvers for stochastic generalized Nash equilibrium problems."""

from .game import (
    AffineCoupling,
    GameProblem,
    GameValidationError,
    MultiplierGraph,
    SeparableCoupling,
    laplacian,
    validate_game,
)
from .oracle import BatchSchedule, RngStreams
from .scenarios import CournotParams, build_cournot, build_game, build_illustrative, build_quadratic_kkt
from .solvers import OracleConfig, SolverConfig, SolverKind, run
from .tuning import StepConfig, Vanishing, instability_tuner

__all__ = [
    "AffineCoupling",
    "BatchSchedule",
    "CournotParams",
    "GameProblem",
    "GameValidationError",
    "MultiplierGraph",
    "OracleConfig",
    "RngStreams",
    "SeparableCoupling",
    "SolverConfig",
    "SolverKind",
    "StepConfig",
    "Vanishing",
    "build_cournot",
    "build_game",
    "build_illustrative",
    "build_quadratic_kkt",
    "instability_tuner",
    "laplacian",
    "run",
    "validate_game",
]
