"""LS, ALS, TR and ATR drivers."""

from __future__ import annotations

from ..problem import ClusterPartition, TwoStageProblem, make_partition
from .base import (
    Controller,
    PointRecord,
    RunResult,
    SolverConfig,
    SyncController,
    Termination,
    default_start,
    read_trace,
    write_trace,
)
from .executors import ScriptedExecutor, SerialExecutor
from .lshaped import AsyncLShaped, LShaped
from .trust import AsyncTrustRegion, RadiusState, TrustRegion, reduce_delta_atr, reduce_delta_tr

CONTROLLERS = {"LS": LShaped, "ALS": AsyncLShaped, "TR": TrustRegion, "ATR": AsyncTrustRegion}


def run(method: str, problem: TwoStageProblem, partition: ClusterPartition | None = None,
        config: SolverConfig | None = None, executor=None, x0=None, observer=None) -> RunResult:
    """Build the controller for `method` and drive it to termination."""
    try:
        cls = CONTROLLERS[method.upper()]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; expected one of {sorted(CONTROLLERS)}") from None
    config = config or SolverConfig()
    if partition is None:
        T = config.T or problem.N
        partition = make_partition(problem.N, T, config.C or T)
    ctrl = cls(problem, partition, config, x0=x0, observer=observer)
    stats = (executor or SerialExecutor()).run(ctrl)
    return ctrl.result(stats)


def run_ls(problem, partition=None, config=None, executor=None, **kw) -> RunResult:
    return run("LS", problem, partition, config, executor, **kw)


def run_als(problem, partition=None, config=None, executor=None, **kw) -> RunResult:
    return run("ALS", problem, partition, config, executor, **kw)


def run_tr(problem, partition=None, config=None, executor=None, **kw) -> RunResult:
    return run("TR", problem, partition, config, executor, **kw)


def run_atr(problem, partition=None, config=None, executor=None, **kw) -> RunResult:
    return run("ATR", problem, partition, config, executor, **kw)


__all__ = [
    "AsyncLShaped", "AsyncTrustRegion", "CONTROLLERS", "Controller", "LShaped", "PointRecord",
    "RadiusState", "RunResult", "ScriptedExecutor", "SerialExecutor", "SolverConfig", "SyncController",
    "Termination", "TrustRegion", "default_start", "read_trace", "reduce_delta_atr", "reduce_delta_tr",
    "run", "run_als", "run_atr", "run_ls", "run_tr", "write_trace",
]
