"""Shared controller machinery.

Every algorithm is a controller: `start()` returns the first batch of
tasks, `on_result(task_result)` consumes one completion event and
returns the tasks it wants dispatched next. Executors own the delivery
order; controllers must be correct under any order and never see two
events at once.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import lp
from ..cutmodel import ModelState
from ..problem import ClusterPartition, CompleteRecourseViolation, TwoStageProblem, ValidationError
from ..recourse import TaskResult, TaskSpec
from ..stats import RunStats

_log = logging.getLogger(__name__)


class Termination(enum.Enum):
    CONVERGED = "converged"
    ITERATION_CAP = "iteration_cap"
    OPTIMAL_AT_START = "optimal_at_start"
    BASKET_DRAINED = "basket_drained"


@dataclass
class SolverConfig:
    eps_tol: float = 1e-5
    delta_hi: float = 1e3
    delta0: float = 1.0
    xi: float = 1e-4
    eta: float = 0.0
    sigma: float = 0.7
    K: int = 1
    T: int | None = None
    C: int | None = None
    inactivity_threshold: float = 100
    theta_floor: float = -1e9
    max_iterations: int = 10_000

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.xi < 0.5:
            raise ValidationError(f"xi must lie in (0, 1/2), got {self.xi}")
        if not 0.0 < self.sigma <= 1.0:
            raise ValidationError(f"sigma must lie in (0, 1], got {self.sigma}")
        if not 0.0 < self.delta0 <= self.delta_hi:
            raise ValidationError(f"need 0 < delta0 <= delta_hi, got {self.delta0}, {self.delta_hi}")
        if not 0.0 <= self.eta < 1.0:
            raise ValidationError(f"eta must lie in [0, 1), got {self.eta}")
        if int(self.K) != self.K or self.K < 1:
            raise ValidationError(f"basket size K must be a positive integer, got {self.K}")
        if not self.eps_tol >= 0.0:
            raise ValidationError("eps_tol must be nonnegative")
        if not math.isfinite(self.theta_floor):
            raise ValidationError("theta_floor must be finite")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be positive")
        if self.inactivity_threshold < 0:
            raise ValidationError("inactivity_threshold must be nonnegative")
        for name in ("T", "C"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValidationError(f"{name} must be positive")


@dataclass
class PointRecord:
    """A first-stage point whose evaluation has been requested."""

    id: int
    x: np.ndarray
    parent: int = -1
    delta: float = float("nan")
    m: float = float("nan")
    t: int = 0
    speceval: bool = False
    values: dict = field(default_factory=dict)
    subgrads: dict = field(default_factory=dict)
    intercepts: dict = field(default_factory=dict)
    Q: float = float("nan")

    @property
    def complete(self) -> bool:
        return not math.isnan(self.Q)


@dataclass
class RunResult:
    x: np.ndarray
    objective: float
    termination: Termination
    iterations: int
    points_evaluated: int
    points: list
    trace: list
    stats: RunStats | None = None
    model: ModelState | None = None
    records: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.termination in (Termination.CONVERGED, Termination.OPTIMAL_AT_START)

    def point_sequence(self) -> list:
        return [p.copy() for p in self.points]


def default_start(problem: TwoStageProblem) -> np.ndarray:
    """Zero, or the first-stage-only optimum when A x = b rules zero out."""
    first = problem.first
    if first.A.shape[0] == 0 or np.allclose(first.b, 0.0):
        return np.zeros(problem.n)
    sol = lp.solve(lp.LpProblem(c=first.c, A=first.A, b=first.b))
    if not sol.optimal:
        raise ValidationError(f"first-stage constraints admit no nonnegative point ({sol.status.value})")
    return np.maximum(sol.x, 0.0)


def within(gap: float, reference: float, eps: float) -> bool:
    return gap <= eps * (1.0 + abs(reference))


class Controller:
    """Common bookkeeping: points, task fan-out, cut intake, trace, stopping."""

    name = "base"

    def __init__(self, problem: TwoStageProblem, partition: ClusterPartition, config: SolverConfig,
                 x0=None, observer=None):
        if partition.N != problem.N:
            raise ValidationError(f"partition covers {partition.N} scenarios, problem has {problem.N}")
        config.validate()
        self.problem = problem
        self.partition = partition
        self.config = config
        self.observer = observer
        self.model = ModelState(problem.first, partition.T, theta_floor=config.theta_floor,
                                inactivity_threshold=config.inactivity_threshold)
        x0 = default_start(problem) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
        if x0.size != problem.n:
            raise ValidationError(f"starting point has length {x0.size}, expected {problem.n}")
        self.x0 = np.maximum(x0, 0.0)
        self.records: dict[int, PointRecord] = {}
        self.points: list[np.ndarray] = []
        self.trace: list[dict] = []
        self.done = False
        self.termination: Termination | None = None
        self.final_x: np.ndarray | None = None
        self.final_value = float("nan")
        self.tasks_dispatched = 0
        self.results_applied = 0
        self._next_task = 0

    # -- events ------------------------------------------------------------
    def start(self) -> list[TaskSpec]:
        raise NotImplementedError

    def on_result(self, result: TaskResult) -> list[TaskSpec]:
        raise NotImplementedError

    @property
    def master_pivots(self) -> int:
        return self.model.master_pivots

    @property
    def points_evaluated(self) -> int:
        """Points generated by master solves; the 'points evaluated' stat."""
        return self.model.master_solve_counter

    # -- helpers -----------------------------------------------------------
    def _emit(self, event: str, **data) -> None:
        rec = {"event": event}
        rec.update(data)
        self.trace.append(rec)
        if self.observer is not None:
            self.observer(event, self, data)

    def _new_point(self, x, parent: int = -1, delta: float = float("nan"), m: float = float("nan")) -> PointRecord:
        pid = len(self.records)
        rec = PointRecord(id=pid, x=np.array(x, dtype=float), parent=parent, delta=delta, m=m)
        self.records[pid] = rec
        self.points.append(rec.x.copy())
        return rec

    def _tasks_for(self, rec: PointRecord) -> list[TaskSpec]:
        tasks = []
        for chunk in self.partition.chunks:
            tasks.append(TaskSpec(point_id=rec.id, x=rec.x, cluster_ids=chunk, task_id=self._next_task))
            self._next_task += 1
        self.tasks_dispatched += len(tasks)
        self._emit("dispatch", point=rec.id, x=rec.x.tolist(), parent=rec.parent,
                   delta=_num(rec.delta), m=_num(rec.m))
        return tasks

    def _absorb(self, result: TaskResult) -> PointRecord:
        """Record a task's cluster values on its point; returns the point."""
        rec = self.records[result.point_id]
        for cr in result.clusters:
            if not cr.feasible:
                raise CompleteRecourseViolation(cr.infeasible.scenario, cr.infeasible.certificate, rec.x)
            if cr.cluster in rec.values:
                raise RuntimeError(f"cluster {cr.cluster} of point {rec.id} delivered twice")
            rec.values[cr.cluster] = cr.value
            rec.subgrads[cr.cluster] = np.asarray(cr.subgrad)
            if cr.intercept is not None:
                rec.intercepts[cr.cluster] = cr.intercept
        rec.t = len(rec.values)
        if rec.t == self.partition.T:
            rec.Q = float(self.problem.first.c @ rec.x) + math.fsum(rec.values[j] for j in range(self.partition.T))
        self.results_applied += 1
        self._emit("result", point=rec.id, clusters=[cr.cluster for cr in result.clusters], t=rec.t,
                   Q=_num(rec.Q))
        return rec

    def _add_cut(self, rec: PointRecord, j: int, parent: int = -1, skip_if_modelled: bool = False) -> int | None:
        value, g = rec.values[j], rec.subgrads[j]
        if skip_if_modelled:
            modelled = self.model.cluster_values(rec.x)[j]
            if value <= modelled + 1e-9:
                return None
        f = rec.intercepts.get(j)
        if f is None:
            f = value - float(g @ rec.x)
        return self.model.add_optimality_cut(j, g, f, origin=rec.id, parent=parent)

    def _at_cap(self) -> bool:
        return self.model.master_solve_counter >= self.config.max_iterations

    def _finish(self, reason: Termination, x, value: float) -> None:
        self.done = True
        self.termination = reason
        self.final_x = np.array(x, dtype=float)
        self.final_value = float(value)
        self._emit("stop", reason=reason.value, objective=_num(value), masters=self.model.master_solve_counter)

    def drained(self) -> None:
        """Called by executors when no task is left in flight and the run has not stopped."""
        if not self.done:
            x, value = self._best()
            self._finish(Termination.BASKET_DRAINED, x, value)

    def _best(self):
        done = [r for r in self.records.values() if r.complete]
        if not done:
            return self.x0, float("nan")
        best = min(done, key=lambda r: (r.Q, r.id))
        return best.x, best.Q

    def result(self, stats: RunStats | None = None) -> RunResult:
        if not self.done:
            raise RuntimeError("controller has not terminated")
        if stats is None:
            stats = RunStats()
        stats.points_evaluated = self.points_evaluated
        stats.max_cuts = self.model.max_cuts
        stats.tasks_dispatched = self.tasks_dispatched
        stats.results_applied = self.results_applied
        return RunResult(
            x=self.final_x, objective=self.final_value, termination=self.termination,
            iterations=self.model.master_solve_counter, points_evaluated=self.points_evaluated,
            points=self.points, trace=self.trace, stats=stats, model=self.model, records=self.records,
        )


class SyncController(Controller):
    """Adapter for synchronous algorithms written as generators.

    The generator yields a PointRecord to be evaluated and is resumed
    with the same record once every cluster of it has come back.
    """

    def start(self) -> list[TaskSpec]:
        self._gen = self.algorithm()
        self._waiting: PointRecord | None = None
        return self._advance(None)

    def algorithm(self):
        raise NotImplementedError

    def _advance(self, value) -> list[TaskSpec]:
        try:
            rec = self._gen.send(value)
        except StopIteration:
            if not self.done:
                raise RuntimeError(f"{self.name} generator ended without a termination reason")
            return []
        self._waiting = rec
        return self._tasks_for(rec)

    def on_result(self, result: TaskResult) -> list[TaskSpec]:
        if self.done:
            return []
        rec = self._absorb(result)
        if rec is not self._waiting:
            raise RuntimeError(f"{self.name} received a result for point {rec.id} it is not waiting on")
        if not rec.complete:
            return []
        return self._advance(rec)


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def write_trace(records, path) -> None:
    """One JSON object per line."""
    with Path(path).open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_trace(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
