"""Synchronous and asynchronous decomposition for two-stage stochastic LPs."""

from .problem import (
    ClusterPartition,
    CompleteRecourseViolation,
    FirstStage,
    NumericalFailure,
    ScenarioData,
    TwoStageProblem,
    ValidationError,
    evaluate_Q,
    make_partition,
    solve_deterministic_equivalent,
    toy_nv,
)
from .solvers import RunResult, SolverConfig, Termination, run, run_als, run_atr, run_ls, run_tr

__version__ = "0.1.0"

__all__ = [
    "ClusterPartition", "CompleteRecourseViolation", "FirstStage", "NumericalFailure", "RunResult",
    "ScenarioData", "SolverConfig", "Termination", "TwoStageProblem", "ValidationError", "evaluate_Q",
    "make_partition", "run", "run_als", "run_atr", "run_ls", "run_tr", "solve_deterministic_equivalent",
    "toy_nv",
]
