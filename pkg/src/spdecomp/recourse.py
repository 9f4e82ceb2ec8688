"""Worker-side second-stage evaluation.

A task names a first-stage point and a chunk of clusters; executing it
solves every scenario LP in those clusters and returns, per cluster, the
probability-weighted partial sum Q_[j](x) and its subgradient
g_j = -sum_{i in N_j} p_i T_i' pi_i, or an infeasibility certificate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lp
from .cutmodel import Cut, CutKind
from .problem import (
    ClusterPartition,
    CompleteRecourseViolation,
    TwoStageProblem,
    ValidationError,
    lp_failure,
    scenario_lp,
)


@dataclass(frozen=True)
class TaskSpec:
    point_id: int
    x: np.ndarray
    cluster_ids: tuple
    task_id: int = -1

    def __post_init__(self):
        if not self.cluster_ids:
            raise ValidationError("a task must cover at least one cluster")
        x = np.array(self.x, dtype=float).reshape(-1)
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "cluster_ids", tuple(int(j) for j in self.cluster_ids))


@dataclass(frozen=True)
class Infeasibility:
    scenario: int
    certificate: np.ndarray


@dataclass(frozen=True)
class ClusterResult:
    cluster: int
    value: float | None = None
    subgrad: np.ndarray | None = None
    infeasible: Infeasibility | None = None
    # sum p_i pi_i'h_i, so cut intercepts avoid value - g'x cancellation at large x
    intercept: float | None = None

    def __post_init__(self):
        if (self.infeasible is None) == (self.value is None or self.subgrad is None):
            raise ValueError("a cluster result carries either (value, subgrad) or an infeasibility")

    @property
    def feasible(self) -> bool:
        return self.infeasible is None


@dataclass(frozen=True)
class TaskResult:
    point_id: int
    clusters: tuple
    work_units: int
    task_id: int = -1


def solve_scenario(problem: TwoStageProblem, i: int, x) -> tuple[float, np.ndarray]:
    """Q_i(x) and an optimal dual pi_i of the scenario LP.

    Raises CompleteRecourseViolation when the LP is infeasible.
    """
    value, pi, _ = _solve_scenario(problem, i, np.asarray(x, dtype=float))
    return value, pi


def _solve_scenario(problem, i, x):
    if not 0 <= i < problem.N:
        raise ValidationError(f"scenario index {i} out of range")
    sol = lp.solve(scenario_lp(problem, i, x))
    if sol.status is lp.Status.INFEASIBLE:
        raise CompleteRecourseViolation(i, sol.farkas, x)
    if not sol.optimal:
        raise lp_failure(sol, f"scenario {i}")
    return sol.objective, sol.duals, sol.iterations


def _evaluate_cluster(problem, partition, j, x):
    value = 0.0
    g = np.zeros(problem.n)
    intercept = 0.0
    pivots = 0
    for i in partition.clusters[j]:
        s = problem.scenarios[i]
        try:
            qi, pi, it = _solve_scenario(problem, i, x)
        except CompleteRecourseViolation as exc:
            return ClusterResult(cluster=j, infeasible=Infeasibility(i, np.asarray(exc.certificate))), pivots
        pivots += it
        value += s.p * qi
        g -= s.p * (s.T.T @ pi)
        intercept += s.p * float(pi @ s.h)
    g.setflags(write=False)
    return ClusterResult(cluster=j, value=value, subgrad=g, intercept=intercept), pivots


def evaluate_cluster(problem: TwoStageProblem, partition: ClusterPartition, j: int, x) -> ClusterResult:
    if not 0 <= j < partition.T:
        raise ValidationError(f"cluster index {j} out of range")
    return _evaluate_cluster(problem, partition, j, np.asarray(x, dtype=float))[0]


def execute_task(problem: TwoStageProblem, partition: ClusterPartition, task: TaskSpec) -> TaskResult:
    """Pure function of its arguments; safe to call concurrently."""
    if any(not 0 <= j < partition.T for j in task.cluster_ids):
        raise ValidationError(f"task clusters {task.cluster_ids} outside partition of size {partition.T}")
    results = []
    work = 0
    for j in task.cluster_ids:
        res, pivots = _evaluate_cluster(problem, partition, j, task.x)
        results.append(res)
        work += pivots
    return TaskResult(point_id=task.point_id, clusters=tuple(results), work_units=work, task_id=task.task_id)


def make_feasibility_cut(certificate, scenario, x_hat=None, W=None):
    """Turn a Farkas certificate pi for W y = h - T x_hat, y >= 0 into the cut (pi'T) x >= pi'h.

    `scenario` is the ScenarioData whose LP is infeasible. When `x_hat`
    is given the certificate is checked to separate it; when `W` is
    given the sign condition W'pi <= 0 is checked too.
    """
    pi = np.asarray(certificate, dtype=float).reshape(-1)
    if pi.size != scenario.h.size:
        raise ValidationError("certificate length does not match the scenario rows")
    if W is not None and np.any(np.asarray(W).T @ pi > 1e-9):
        raise ValidationError("certificate violates W'pi <= 0")
    if x_hat is not None:
        gap = float(pi @ (scenario.h - scenario.T @ np.asarray(x_hat, dtype=float)))
        if not gap > 1e-12:
            raise ValidationError("certificate does not separate the query point")
    elif not np.any(pi):
        raise ValidationError("zero certificate")
    return Cut(kind=CutKind.FEASIBILITY, cluster=None, g=pi @ scenario.T, f=float(pi @ scenario.h))
