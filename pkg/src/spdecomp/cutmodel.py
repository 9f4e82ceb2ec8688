"""Piecewise-linear model of the recourse function and the master LP.

The model is m(x) = c'x + sum_j m_j(x) with

    m_j(x) = max(theta_floor, max over cluster-j cuts of g'x + f).

Cuts carry provenance (the points they were generated at and those
points' parent incumbents) so the trust-region controllers can decide
which cuts may be dropped. Deletion is two-step: the Model-Update
procedures only mark cuts, and `ModelState.prune` removes marked cuts
that have also been inactive for more than `inactivity_threshold`
master solves.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import lp
from .problem import FirstStage, NumericalFailure, ValidationError

_log = logging.getLogger(__name__)


class CutKind(enum.Enum):
    OPTIMALITY = "optimality"
    FEASIBILITY = "feasibility"


class MasterInfeasible(RuntimeError):
    """Feasibility cuts (or A x = b with the trust box) leave no point."""


class BoundActiveError(ValueError):
    """A theta floor is binding, so the model value is not a valid lower bound."""


@dataclass(eq=False)
class Cut:
    """theta_j >= g'x + f (optimality) or g'x >= f (feasibility)."""

    kind: CutKind
    cluster: int | None
    g: np.ndarray
    f: float
    origin_point: int = -1
    parent_incumbent: int = -1
    id: int = -1
    created_at: int = 0
    last_active_at: int = 0
    deletable: bool = False
    origins: set = field(default_factory=set)
    parents: set = field(default_factory=set)

    def __post_init__(self):
        self.g = np.array(self.g, dtype=float).reshape(-1)
        self.f = float(self.f)
        if self.kind is CutKind.OPTIMALITY and self.cluster is None:
            raise ValidationError("optimality cuts need a cluster")
        if not self.origins:
            self.origins = {self.origin_point}
        if not self.parents:
            self.parents = {self.parent_incumbent}

    def value(self, x) -> float:
        return float(self.g @ np.asarray(x, dtype=float) + self.f)

    def satisfied(self, x, tol: float = 1e-9) -> bool:
        """Feasibility cuts only: g'x >= f."""
        return float(self.g @ np.asarray(x, dtype=float)) - self.f >= -tol * (1.0 + abs(self.f))

    def key(self):
        return (self.kind, self.cluster, tuple(np.round(self.g, 10).tolist()), round(self.f, 8))


@dataclass
class MasterSolution:
    x: np.ndarray
    theta: np.ndarray
    model_value: float
    active_cut_ids: frozenset
    bound_active: bool
    counter: int
    pivots: int = 0

    @property
    def valid_lower_bound(self) -> bool:
        return not self.bound_active


class ModelState:
    """Cut pools for T clusters plus feasibility cuts, owned by one controller."""

    def __init__(self, first: FirstStage, n_clusters: int, theta_floor: float = -1e9,
                 inactivity_threshold: float = 100):
        if not math.isfinite(theta_floor):
            raise ValidationError("theta_floor must be finite")
        if n_clusters < 1:
            raise ValidationError("need at least one cluster")
        self.first = first
        self.T = n_clusters
        self.theta_floor = float(theta_floor)
        self.inactivity_threshold = inactivity_threshold
        self.cuts: dict[int, Cut] = {}
        self._keys: dict = {}
        self._next_id = 0
        self.master_solve_counter = 0
        self.master_pivots = 0
        self.max_cuts = 0
        self.removed = 0
        self.trace: list[dict] = []
        self._basis_keys = None
        self._seen_rows: set = set()

    # -- cut bookkeeping -------------------------------------------------
    def add_cut(self, cut: Cut) -> int:
        """Store `cut`; an identical row for the same cluster is merged instead."""
        if cut.g.size != self.first.n:
            raise ValidationError(f"cut has {cut.g.size} coefficients, expected {self.first.n}")
        if cut.cluster is not None and not 0 <= cut.cluster < self.T:
            raise ValidationError(f"cluster {cut.cluster} out of range")
        key = cut.key()
        existing = self._keys.get(key)
        if existing is not None:
            old = self.cuts[existing]
            old.origins |= cut.origins
            old.parents |= cut.parents
            old.deletable = False
            return existing
        cut.id = self._next_id
        self._next_id += 1
        cut.created_at = cut.last_active_at = self.master_solve_counter
        self.cuts[cut.id] = cut
        self._keys[key] = cut.id
        self.max_cuts = max(self.max_cuts, self.n_optimality_cuts)
        return cut.id

    def add_optimality_cut(self, cluster: int, g, f: float, origin: int, parent: int = -1) -> int:
        return self.add_cut(Cut(CutKind.OPTIMALITY, cluster, g, f, origin_point=origin, parent_incumbent=parent))

    def remove(self, cut_id: int) -> None:
        cut = self.cuts.pop(cut_id)
        self._keys.pop(cut.key(), None)
        self.removed += 1

    @property
    def n_optimality_cuts(self) -> int:
        return sum(1 for c in self.cuts.values() if c.kind is CutKind.OPTIMALITY)

    def optimality_cuts(self):
        return [c for c in self.cuts.values() if c.kind is CutKind.OPTIMALITY]

    def feasibility_cuts(self):
        return [c for c in self.cuts.values() if c.kind is CutKind.FEASIBILITY]

    # -- model evaluation --------------------------------------------------
    def cluster_values(self, x) -> np.ndarray:
        """m_j(x) for every cluster, including the floor."""
        x = np.asarray(x, dtype=float)
        vals = np.full(self.T, self.theta_floor)
        for c in self.cuts.values():
            if c.kind is CutKind.OPTIMALITY:
                vals[c.cluster] = max(vals[c.cluster], c.value(x))
        return vals

    def floor_active_at(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        best = np.full(self.T, -np.inf)
        for c in self.optimality_cuts():
            best[c.cluster] = max(best[c.cluster], c.value(x))
        return bool(np.any(best <= self.theta_floor + tol * (1.0 + abs(self.theta_floor))))

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(self.first.c @ x + self.cluster_values(x).sum())

    # -- master problem ------------------------------------------------------
    def solve_master(self, center=None, delta: float | None = None) -> MasterSolution:
        """min c'x + sum theta_j over the cuts, A x = b, x >= 0 and ||x - center||_inf <= delta."""
        n, T = self.first.n, self.T
        if delta is not None:
            if center is None:
                raise ValidationError("a trust-region radius needs a center")
            if not delta > 0:
                raise ValidationError("trust-region radius must be positive")
        cut_list = list(self.cuts.values())
        K = len(cut_list)
        ma = self.first.A.shape[0]
        nv = n + T + K
        A = np.zeros((ma + K, nv))
        b = np.zeros(ma + K)
        A[:ma, :n] = self.first.A
        b[:ma] = self.first.b
        for k, cut in enumerate(cut_list):
            r = ma + k
            if cut.kind is CutKind.OPTIMALITY:
                A[r, :n] = -cut.g
                A[r, n + cut.cluster] = 1.0
            else:
                A[r, :n] = cut.g
            A[r, n + T + k] = -1.0
            b[r] = cut.f
        cost = np.concatenate([self.first.c, np.ones(T), np.zeros(K)])
        lb = np.concatenate([np.zeros(n), np.full(T, self.theta_floor), np.zeros(K)])
        ub = np.full(nv, np.inf)
        if delta is not None:
            center = np.asarray(center, dtype=float).reshape(-1)
            lb[:n] = np.maximum(0.0, center - delta)
            ub[:n] = center + delta
        problem = lp.LpProblem(c=cost, A=A, b=b, lb=lb, ub=ub)

        col_keys = [("x", i) for i in range(n)] + [("t", j) for j in range(T)] + [("s", c.id) for c in cut_list]
        row_keys = [("A", i) for i in range(ma)] + [("c", c.id) for c in cut_list]
        hint = self._hint(col_keys, row_keys)
        sol = lp.solve(problem) if hint is None else lp.solve_with_warm_start(problem, hint)

        self.master_solve_counter += 1
        self.master_pivots += sol.iterations
        counter = self.master_solve_counter
        if sol.status is lp.Status.INFEASIBLE:
            self.trace.append({"counter": counter, "status": "infeasible"})
            raise MasterInfeasible("master problem infeasible: feasibility cuts exclude every point")
        if sol.status is lp.Status.UNBOUNDED:
            raise NumericalFailure("master problem unbounded; the model is not bounded below")
        if not sol.optimal:
            raise NumericalFailure(f"master LP failed: {sol.status.value}")
        self._remember_basis(sol.basis, col_keys, row_keys, nv)

        x = np.maximum(sol.x[:n], 0.0)
        theta = sol.x[n:n + T].copy()
        slacks = sol.x[n + T:]
        active = set()
        for k, cut in enumerate(cut_list):
            if slacks[k] <= 1e-8 * (1.0 + abs(cut.f)):
                active.add(cut.id)
                cut.last_active_at = counter
        floor_tol = 1e-9 * (1.0 + abs(self.theta_floor))
        bound_active = bool(np.any(theta <= self.theta_floor + floor_tol))
        model_value = float(sol.objective)
        self.trace.append({
            "counter": counter,
            "model_value": model_value,
            "bound_active": bound_active,
            "active_cuts": len(active),
            "cuts": K,
        })
        return MasterSolution(x=x, theta=theta, model_value=model_value, active_cut_ids=frozenset(active),
                              bound_active=bound_active, counter=counter, pivots=sol.iterations)

    def _hint(self, col_keys, row_keys):
        if self._basis_keys is None:
            return None
        basic_keys, upper_keys = self._basis_keys
        index = {k: i for i, k in enumerate(col_keys)}
        nv = len(col_keys)
        rows = {k: r for r, k in enumerate(row_keys)}
        basis = []
        for key in basic_keys:
            if key[0] == "a":
                if key[1] in rows:
                    basis.append(nv + rows[key[1]])
            elif key in index:
                basis.append(index[key])
        have = set(basis)
        for k in row_keys:
            if k[0] == "c" and index.get(("s", k[1])) not in have and k not in self._seen_rows:
                basis.append(index[("s", k[1])])
        if len(basis) != len(row_keys):
            return None
        upper = [index[k] for k in upper_keys if k in index]
        return basis, upper

    def _remember_basis(self, basis, col_keys, row_keys, nv):
        basic, upper = basis
        keys = []
        for j in basic:
            keys.append(("a", row_keys[j - nv]) if j >= nv else col_keys[j])
        self._basis_keys = (keys, [col_keys[j] for j in upper])
        self._seen_rows = set(row_keys)

    # -- deletion --------------------------------------------------------
    def prune(self) -> int:
        """Drop cuts that are marked deletable and inactive for more than the threshold."""
        if not math.isfinite(self.inactivity_threshold):
            return 0
        now = self.master_solve_counter
        doomed = [c.id for c in self.cuts.values()
                  if c.kind is CutKind.OPTIMALITY and c.deletable
                  and now - c.last_active_at > self.inactivity_threshold]
        for cid in doomed:
            self.remove(cid)
        if doomed:
            _log.debug("pruned %d cuts at master solve %d", len(doomed), now)
        return len(doomed)


def mark_deletable_except(model: ModelState, point_id: int) -> None:
    """After a new major iterate / incumbent: every cut not generated there may go."""
    for cut in model.optimality_cuts():
        cut.deletable = point_id not in cut.origins


def model_update_tr(model: ModelState, center_point: int, candidate_point: int, solution: MasterSolution,
                    gap_now: float, minor_gaps: Mapping[int, float], eta: float = 0.0) -> int:
    """Mark cuts after a rejected minor iterate of the synchronous trust-region method.

    `minor_gaps` maps each earlier minor iterate of the current major
    iteration to Q(x^k) - m_{k,l'} at its generation; `gap_now` is the
    same quantity for the rejected candidate. Cuts from the candidate
    itself are new in this round and are left unmarked. Returns the
    number of cuts marked deletable.
    """
    marked = 0
    for cut in model.optimality_cuts():
        keep = (
            center_point in cut.origins
            or cut.id in solution.active_cut_ids
            or candidate_point in cut.origins
            or any(o in minor_gaps and gap_now > eta * minor_gaps[o] for o in cut.origins)
        )
        cut.deletable = not keep
        marked += cut.deletable
    return marked


def model_update_atr(model: ModelState, latest_point: int, latest_parent: int, active_cut_ids,
                     q_parent: float, m_latest: float, records: Mapping[int, tuple], eta: float = 0.0) -> int:
    """Mark cuts after a completed point fails the incumbent test.

    `records[q] = (parent incumbent I_q, model value m^q)` for every
    generated point. A cut is kept when it was generated at the parent
    incumbent of the latest iterate, was active in that iterate's
    subproblem, or came from an iterate l <= latest with the same
    (real) parent for which Q^I - m^latest > eta (Q^I - m^l).
    """
    marked = 0
    for cut in model.optimality_cuts():
        keep = latest_parent in cut.origins or cut.id in active_cut_ids
        if not keep and latest_parent != -1:
            for o in cut.origins:
                rec = records.get(o)
                if rec is None or o > latest_point or rec[0] != latest_parent:
                    continue
                if q_parent - m_latest > eta * (q_parent - rec[1]):
                    keep = True
                    break
        cut.deletable = not keep
        marked += cut.deletable
    return marked


def model_lower_bound_gap(model_value: float, reference_value: float, bound_active: bool = False) -> float:
    """(reference - model) / (1 + |reference|); undefined while a theta floor binds."""
    if bound_active:
        raise BoundActiveError("model value comes from an active theta floor")
    return (reference_value - model_value) / (1.0 + abs(reference_value))
