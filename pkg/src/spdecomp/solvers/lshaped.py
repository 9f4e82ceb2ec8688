"""Multicut L-shaped method, synchronous (LS) and asynchronous (ALS)."""

from __future__ import annotations

import math

from ..recourse import TaskResult, TaskSpec
from .base import Controller, SyncController, Termination, within


class LShaped(SyncController):
    name = "LS"

    def algorithm(self):
        cfg = self.config
        rec = yield self._new_point(self.x0)
        self._cuts(rec)
        best = rec
        first_master = True
        while True:
            if self._at_cap():
                self._finish(Termination.ITERATION_CAP, best.x, best.Q)
                return
            sol = self.model.solve_master()
            self._emit("master", m=sol.model_value, bound_active=sol.bound_active, q_min=best.Q)
            if not sol.bound_active and within(best.Q - sol.model_value, best.Q, cfg.eps_tol):
                reason = Termination.OPTIMAL_AT_START if first_master else Termination.CONVERGED
                self._finish(reason, best.x, best.Q)
                return
            first_master = False
            rec = yield self._new_point(sol.x, m=sol.model_value)
            self._cuts(rec)
            if rec.Q < best.Q:
                best = rec

    def _cuts(self, rec):
        for j in range(self.partition.T):
            self._add_cut(rec, j, skip_if_modelled=True)


class AsyncLShaped(Controller):
    """Event-driven ALS.

    A new point is generated the first time a fraction sigma of the
    previous point's clusters has come back; Q_min is refreshed whenever
    some point becomes fully evaluated.
    """

    name = "ALS"

    def start(self) -> list[TaskSpec]:
        self.q_min = math.inf
        self.best = None
        self.latest = self._new_point(self.x0)
        self._first_master = True
        # ceil guards against 0.7 * 10 = 7.000000000000001
        self.trigger = max(1, math.ceil(self.config.sigma * self.partition.T - 1e-9))
        return self._tasks_for(self.latest)

    def on_result(self, result: TaskResult) -> list[TaskSpec]:
        if self.done:
            return []
        rec = self._absorb(result)
        for cr in result.clusters:
            self._add_cut(rec, cr.cluster, skip_if_modelled=True)
        if rec.complete and rec.Q < self.q_min:
            self.q_min = rec.Q
            self.best = rec
        if rec.t >= self.trigger and not rec.speceval:
            rec.speceval = True
            return self._next_point()
        return []

    def _next_point(self) -> list[TaskSpec]:
        bx = self.best.x if self.best is not None else self.x0
        if self._at_cap():
            self._finish(Termination.ITERATION_CAP, bx, self.q_min)
            return []
        sol = self.model.solve_master()
        self._emit("master", m=sol.model_value, bound_active=sol.bound_active,
                   q_min=self.q_min if math.isfinite(self.q_min) else None)
        if (not sol.bound_active and math.isfinite(self.q_min)
                and within(self.q_min - sol.model_value, self.q_min, self.config.eps_tol)):
            reason = Termination.OPTIMAL_AT_START if self._first_master else Termination.CONVERGED
            self._finish(reason, self.best.x, self.q_min)
            return []
        self._first_master = False
        self.latest = self._new_point(sol.x, m=sol.model_value)
        return self._tasks_for(self.latest)
