"""Bundle trust-region method, synchronous (TR) and asynchronous (ATR).

The trust region is an l-infinity box around the incumbent, imposed as
bounds on x in the master. Radius reduction uses
rho = min(1, Delta) (Q_cand - Q_center) / (Q_center - m) and a counter
of consecutive "bad" candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..cutmodel import mark_deletable_except, model_update_atr, model_update_tr
from ..recourse import TaskResult, TaskSpec
from .base import Controller, SyncController, Termination, within


@dataclass
class RadiusState:
    delta: float
    counter: int = 0


def reduce_delta_tr(state: RadiusState, q_candidate: float, q_center: float, m: float) -> float:
    """Apply the reduction rule in place; returns rho."""
    rho = min(1.0, state.delta) * (q_candidate - q_center) / (q_center - m)
    if rho > 0:
        state.counter += 1
    if rho > 3 or (state.counter >= 3 and 1 < rho <= 3):
        state.delta /= min(rho, 4.0)
        state.counter = 0
    return rho


def reduce_delta_atr(state: RadiusState, delta_q: float, parent: int, q_candidate: float,
                     q_parent: float, m_q: float) -> float | None:
    """Reduction for a completed ATR point q that failed the incumbent test.

    Computes the candidate radius from the point's own Delta_q and only
    ever shrinks the current radius. Returns rho, or None for points
    without a real parent incumbent.
    """
    if parent == -1:
        return None
    rho = min(1.0, delta_q) * (q_candidate - q_parent) / (q_parent - m_q)
    if rho > 0:
        state.counter += 1
    new_delta = delta_q
    if rho > 3 or (state.counter >= 3 and 1 < rho <= 3):
        new_delta = delta_q / min(rho, 4.0)
        state.counter = 0
    state.delta = min(state.delta, new_delta)
    return rho


def _on_boundary(x, center, delta) -> bool:
    return float(np.max(np.abs(np.asarray(x) - np.asarray(center)), initial=0.0)) >= delta * (1 - 1e-9)


class TrustRegion(SyncController):
    name = "TR"

    def algorithm(self):
        cfg = self.config
        rec = yield self._new_point(self.x0)
        self._cuts(rec)
        center = rec
        radius = RadiusState(cfg.delta0)
        self.radius = radius
        first_master = True
        major = 0
        while True:
            radius.counter = 0
            minor_gaps: dict[int, float] = {}
            minor = 0
            while True:
                if self._at_cap():
                    self._finish(Termination.ITERATION_CAP, center.x, center.Q)
                    return
                sol = self.model.solve_master(center.x, radius.delta)
                gap = center.Q - sol.model_value
                self._emit("master", major=major, minor=minor, center=center.id, delta=radius.delta,
                           m=sol.model_value, bound_active=sol.bound_active, Q_center=center.Q)
                if not sol.bound_active and (within(gap, center.Q, cfg.eps_tol) or gap <= 0):
                    reason = Termination.OPTIMAL_AT_START if first_master else Termination.CONVERGED
                    self._finish(reason, center.x, center.Q)
                    return
                first_master = False
                cand = yield self._new_point(sol.x, parent=center.id, delta=radius.delta, m=sol.model_value)
                self._cuts(cand)
                if cand.Q <= center.Q - cfg.xi * gap:
                    if cand.Q <= center.Q - 0.5 * gap and _on_boundary(cand.x, center.x, radius.delta):
                        radius.delta = min(cfg.delta_hi, 2 * radius.delta)
                    mark_deletable_except(self.model, cand.id)
                    self.model.prune()
                    self._emit("accept", point=cand.id, Q=cand.Q, delta=radius.delta)
                    center = cand
                    break
                model_update_tr(self.model, center.id, cand.id, sol, gap, minor_gaps, cfg.eta)
                minor_gaps[cand.id] = gap
                rho = reduce_delta_tr(radius, cand.Q, center.Q, sol.model_value)
                self.model.prune()
                self._emit("reject", point=cand.id, Q=cand.Q, rho=rho, delta=radius.delta,
                           counter=radius.counter)
                minor += 1
            major += 1

    def _cuts(self, rec):
        for j in range(self.partition.T):
            self._add_cut(rec, j, parent=rec.parent)


class AsyncTrustRegion(Controller):
    """Event-driven ATR with a basket of at most K points in flight."""

    name = "ATR"

    def start(self) -> list[TaskSpec]:
        cfg = self.config
        self.incumbent = -1
        self.q_incumbent = math.inf
        self.radius = RadiusState(cfg.delta0)
        self.basket: set[int] = set()
        self.incumbents: list[int] = []
        self.last_solution = None
        self._first_master = True
        self.trigger = max(1, math.ceil(cfg.sigma * self.partition.T - 1e-9))
        rec = self._new_point(self.x0, parent=-1, delta=cfg.delta0)
        # x^0 counts against the basket so |B| <= K holds from the start
        self.basket.add(rec.id)
        self.latest = rec
        return self._tasks_for(rec)

    def _center(self):
        if self.incumbent == -1:
            return self.x0
        return self.records[self.incumbent].x

    def on_result(self, result: TaskResult) -> list[TaskSpec]:
        if self.done:
            return []
        cfg = self.config
        rec = self._absorb(result)
        for cr in result.clusters:
            self._add_cut(rec, cr.cluster, parent=rec.parent)
        generate = False
        if rec.complete:
            self._complete(rec)
            self.basket.discard(rec.id)
            generate = True
        elif rec.t >= self.trigger and len(self.basket) < cfg.K and not rec.speceval:
            rec.speceval = True
            generate = True
        if not generate:
            return []
        return self._generate()

    def _complete(self, rec):
        cfg = self.config
        parent = rec.parent
        q_parent = self.records[parent].Q if parent != -1 else math.inf
        if rec.Q < self.q_incumbent and (parent == -1 or rec.Q <= q_parent - cfg.xi * (q_parent - rec.m)):
            self.incumbent = rec.id
            self.q_incumbent = rec.Q
            self.incumbents.append(rec.id)
            if (parent != -1 and rec.Q <= q_parent - 0.5 * (q_parent - rec.m)
                    and _on_boundary(rec.x, self.records[parent].x, rec.delta)):
                self.radius.delta = max(self.radius.delta, min(cfg.delta_hi, 2 * rec.delta))
            self.radius.counter = 0
            mark_deletable_except(self.model, rec.id)
            self.model.prune()
            self._emit("accept", point=rec.id, Q=rec.Q, delta=self.radius.delta)
            return
        latest = self.latest
        active = self.last_solution.active_cut_ids if self.last_solution is not None else ()
        model_update_atr(self.model, latest.id, latest.parent, active, self.q_incumbent, latest.m,
                         {q: (r.parent, r.m) for q, r in self.records.items()}, cfg.eta)
        rho = reduce_delta_atr(self.radius, rec.delta, parent, rec.Q, q_parent, rec.m)
        self.model.prune()
        self._emit("reject", point=rec.id, Q=rec.Q, rho=rho, delta=self.radius.delta, counter=self.radius.counter)

    def _generate(self) -> list[TaskSpec]:
        cfg = self.config
        if self.incumbent == -1:
            x_fin, q_fin = self._best()
        else:
            x_fin, q_fin = self.records[self.incumbent].x, self.q_incumbent
        if self._at_cap():
            self._finish(Termination.ITERATION_CAP, x_fin, q_fin)
            return []
        center = self._center()
        delta = self.radius.delta
        sol = self.model.solve_master(center, delta)
        self.last_solution = sol
        self._emit("master", center=self.incumbent, delta=delta, m=sol.model_value,
                   bound_active=sol.bound_active, Q_center=self.q_incumbent if self.incumbent != -1 else None,
                   basket=sorted(self.basket))
        if self.incumbent != -1 and not sol.bound_active:
            gap = self.q_incumbent - sol.model_value
            if within(gap, self.q_incumbent, cfg.eps_tol) or gap <= 0:
                reason = Termination.OPTIMAL_AT_START if self._first_master else Termination.CONVERGED
                self._finish(reason, x_fin, q_fin)
                return []
        self._first_master = False
        rec = self._new_point(sol.x, parent=self.incumbent, delta=delta, m=sol.model_value)
        self.basket.add(rec.id)
        self.latest = rec
        return self._tasks_for(rec)
