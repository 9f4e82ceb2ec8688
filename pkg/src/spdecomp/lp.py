"""Dense bounded revised simplex.

Solves

    min  c'x   s.t.  A x = b,  lb <= x <= ub

and returns primal values, equality-row duals, reduced costs and, for
infeasible problems, a Farkas certificate taken from the phase-1 duals.
The implementation keeps an explicit basis inverse updated by rank-one
eta transforms and refactorized periodically; it is meant for the
desk-scale master and scenario problems of this package, not for
large sparse models.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

_log = logging.getLogger(__name__)

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-10
BLAND_AFTER = 1000
REFACTOR_EVERY = 64


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


class LpValidationError(ValueError):
    pass


@dataclass(frozen=True)
class LpProblem:
    """min c'x s.t. A x = b, lb <= x <= ub (lb defaults to 0, ub to +inf)."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        n = c.size
        A = np.asarray(self.A, dtype=float)
        if A.size == 0:
            A = A.reshape(0, n)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[1] != n:
            raise LpValidationError(f"A has shape {A.shape}, expected (m, {n})")
        if b.size != A.shape[0]:
            raise LpValidationError(f"b has length {b.size}, expected {A.shape[0]}")
        lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(-1)
        ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(-1)
        if lb.size != n or ub.size != n:
            raise LpValidationError("bound vectors must match the number of variables")
        if np.any(lb > ub):
            raise LpValidationError("lower bound exceeds upper bound")
        if np.any(np.isnan(A)) or np.any(np.isnan(b)) or np.any(np.isnan(c)):
            raise LpValidationError("NaN in problem data")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape


@dataclass
class LpSolution:
    status: Status
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    objective: float = float("nan")
    farkas: np.ndarray | None = None
    basis: tuple | None = None
    iterations: int = 0
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


@dataclass
class _Work:
    """Internal standard form: all lower bounds finite, artificials appended."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    n_struct: int
    # column j of the transformed problem -> (original index, sign, offset)
    col_map: list = field(default_factory=list)


def _transform(p: LpProblem) -> _Work:
    """Shift every variable onto a finite lower bound.

    x = ub - x' for variables with only an upper bound, x = x+ - x- for
    free variables.
    """
    cols, costs, lbs, ubs, cmap = [], [], [], [], []
    for j in range(p.c.size):
        lo, hi = p.lb[j], p.ub[j]
        if np.isfinite(lo):
            cols.append(p.A[:, j]); costs.append(p.c[j]); lbs.append(lo); ubs.append(hi)
            cmap.append((j, 1.0))
        elif np.isfinite(hi):
            cols.append(-p.A[:, j]); costs.append(-p.c[j]); lbs.append(-hi); ubs.append(np.inf)
            cmap.append((j, -1.0))
        else:
            cols.append(p.A[:, j]); costs.append(p.c[j]); lbs.append(0.0); ubs.append(np.inf)
            cmap.append((j, 1.0))
            cols.append(-p.A[:, j]); costs.append(-p.c[j]); lbs.append(0.0); ubs.append(np.inf)
            cmap.append((j, -1.0))
    m = p.A.shape[0]
    A = np.column_stack(cols) if cols else np.zeros((m, 0))
    return _Work(A=A.reshape(m, len(cols)), b=p.b.copy(), c=np.array(costs, dtype=float),
                 lb=np.array(lbs, dtype=float), ub=np.array(ubs, dtype=float),
                 n_struct=len(cols), col_map=cmap)


class _Simplex:
    """One solve. Column layout: n structural columns, then m artificials."""

    def __init__(self, work: _Work, max_iter: int):
        self.w = work
        m, n = work.A.shape
        self.m, self.n = m, n
        self.max_iter = max_iter
        self.iterations = 0
        self.degenerate = 0
        self.art_sign = np.ones(m)
        self.lb = np.concatenate([work.lb, np.zeros(m)])
        self.ub = np.concatenate([work.ub, np.full(m, np.inf)])
        self.at_upper = np.zeros(n + m, dtype=bool)
        self.basis = np.arange(n, n + m)
        self.is_basic = np.zeros(n + m, dtype=bool)
        self.is_basic[self.basis] = True
        self.Binv = np.eye(m)
        self.xB = np.zeros(m)
        self.since_refactor = 0

    # -- column access -------------------------------------------------
    def full_A(self) -> np.ndarray:
        return np.hstack([self.w.A, np.diag(self.art_sign)]) if self.m else self.w.A

    def column(self, j: int) -> np.ndarray:
        if j < self.n:
            return self.w.A[:, j]
        col = np.zeros(self.m)
        col[j - self.n] = self.art_sign[j - self.n]
        return col

    def nonbasic_values(self) -> np.ndarray:
        x = np.where(self.at_upper, self.ub, self.lb)
        x[self.basis] = 0.0
        return x

    def primal(self) -> np.ndarray:
        x = self.nonbasic_values()
        x[self.basis] = self.xB
        return x

    def refactor(self) -> bool:
        B = self.full_A()[:, self.basis]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            return False
        xN = self.nonbasic_values()
        self.xB = self.Binv @ (self.w.b - self.full_A() @ xN)
        self.since_refactor = 0
        return bool(np.all(np.isfinite(self.Binv)))

    # -- setup ---------------------------------------------------------
    def cold_start(self):
        xN = np.where(self.at_upper[: self.n], self.w.ub, self.w.lb)
        r = self.w.b - self.w.A @ xN
        self.art_sign = np.where(r >= 0.0, 1.0, -1.0)
        self.Binv = np.diag(self.art_sign)
        self.xB = np.abs(r)

    def warm_start(self, hint) -> bool:
        basis, upper = hint
        basis = np.asarray(basis, dtype=int)
        if basis.shape != (self.m,) or len(set(basis.tolist())) != self.m:
            return False
        if np.any(basis < 0) or np.any(basis >= self.n + self.m):
            return False
        self.at_upper[:] = False
        for j in upper:
            if 0 <= j < self.n and np.isfinite(self.ub[j]):
                self.at_upper[j] = True
        self.basis = basis.copy()
        self.is_basic[:] = False
        self.is_basic[self.basis] = True
        self.at_upper[self.basis] = False
        # artificials only survive as basic variables pinned at zero
        self.ub[self.n:] = 0.0
        if not self.refactor():
            return False
        B = self.full_A()[:, self.basis]
        if np.linalg.cond(B) > 1e12:
            return False
        lo, hi = self.lb[self.basis], self.ub[self.basis]
        tol = FEAS_TOL * (1.0 + np.abs(self.xB))
        return bool(np.all(self.xB >= lo - tol) and np.all(self.xB <= hi + tol))

    # -- core iteration --------------------------------------------------
    def duals(self, cost: np.ndarray) -> np.ndarray:
        return self.Binv.T @ cost[self.basis]

    def run(self, cost: np.ndarray, phase: int) -> Status | None:
        """Iterate to optimality of `cost`. Returns a terminal status or None when optimal."""
        A_full = self.full_A()
        while True:
            if phase == 1 and self.xB[self.basis >= self.n].sum() <= FEAS_TOL * (1.0 + np.abs(self.w.b).max(initial=0.0)):
                return None
            if self.iterations >= self.max_iter:
                return Status.NUMERICAL_FAILURE
            if self.since_refactor >= REFACTOR_EVERY:
                if not self.refactor():
                    return Status.NUMERICAL_FAILURE
            y = self.duals(cost)
            d = cost - A_full.T @ y
            scale = 1.0 + np.abs(cost).max(initial=0.0)
            fixed = self.lb >= self.ub
            improving = (~self.is_basic) & (~fixed) & (
                ((~self.at_upper) & (d < -OPT_TOL * scale)) | (self.at_upper & (d > OPT_TOL * scale))
            )
            cand = np.flatnonzero(improving)
            if cand.size == 0:
                return None
            bland = self.degenerate >= BLAND_AFTER
            if bland:
                j = int(cand[0])
            else:
                j = int(cand[np.argmax(np.abs(d[cand]))])
            direction = -1.0 if self.at_upper[j] else 1.0
            alpha = self.Binv @ A_full[:, j]
            step = direction * alpha
            lo, hi = self.lb[self.basis], self.ub[self.basis]
            ratios = np.full(self.m, np.inf)
            dec = step > PIVOT_TOL
            inc = step < -PIVOT_TOL
            ratios[dec] = (self.xB[dec] - lo[dec]) / step[dec]
            inc_fin = inc & np.isfinite(hi)
            ratios[inc_fin] = (hi[inc_fin] - self.xB[inc_fin]) / -step[inc_fin]
            ratios = np.maximum(ratios, 0.0)
            flip = self.ub[j] - self.lb[j]
            t_min = ratios.min(initial=np.inf)
            if not np.isfinite(t_min) and not np.isfinite(flip):
                if phase == 1:
                    return Status.NUMERICAL_FAILURE
                return Status.UNBOUNDED
            self.iterations += 1
            self.since_refactor += 1
            if flip <= t_min:
                self.xB -= flip * step
                self.at_upper[j] = not self.at_upper[j]
                self.degenerate = 0 if flip > 1e-12 else self.degenerate + 1
                continue
            ties = np.flatnonzero(ratios <= t_min + 1e-12)
            if bland:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(step[ties]))])
            t = ratios[r]
            leaving = int(self.basis[r])
            leaves_upper = bool(step[r] < 0)
            entering_value = (self.ub[j] if self.at_upper[j] else self.lb[j]) + direction * t
            self.xB -= t * step
            self.xB[r] = entering_value
            # eta update of the explicit inverse
            piv = alpha[r]
            if abs(piv) < PIVOT_TOL:
                return Status.NUMERICAL_FAILURE
            row = self.Binv[r] / piv
            self.Binv -= np.outer(alpha, row)
            self.Binv[r] = row
            self.basis[r] = j
            self.is_basic[j] = True
            self.is_basic[leaving] = False
            self.at_upper[j] = False
            self.at_upper[leaving] = leaves_upper and np.isfinite(self.ub[leaving])
            self.degenerate = self.degenerate + 1 if t <= 1e-12 else 0


def _recover(work: _Work, p: LpProblem, xt: np.ndarray, dt: np.ndarray):
    x = np.zeros(p.c.size)
    d = np.zeros(p.c.size)
    seen = set()
    for k, (j, sign) in enumerate(work.col_map):
        x[j] += sign * xt[k]
        if j not in seen:
            d[j] = sign * dt[k]
            seen.add(j)
    return x, d


def solve(problem: LpProblem, max_iter: int = 50_000) -> LpSolution:
    """Solve an LP from scratch. Deterministic for fixed input."""
    return _solve(problem, None, max_iter)


def solve_with_warm_start(problem: LpProblem, basis_hint, max_iter: int = 50_000) -> LpSolution:
    """Solve starting from `basis_hint` = (basic column indices, nonbasic-at-upper indices).

    A hint that is malformed, singular or primal infeasible is ignored
    and the problem is solved from scratch; the hint never changes the
    returned solution contract.
    """
    return _solve(problem, basis_hint, max_iter)


def _solve(problem: LpProblem, hint, max_iter: int) -> LpSolution:
    work = _transform(problem)
    sx = _Simplex(work, max_iter)
    m, n = sx.m, sx.n
    warmed = False
    if hint is not None:
        try:
            warmed = sx.warm_start(hint)
        except (ValueError, TypeError, np.linalg.LinAlgError):
            warmed = False
        if not warmed:
            _log.debug("basis hint rejected, solving cold")
            sx = _Simplex(work, max_iter)
    if not warmed:
        sx.cold_start()
        cost1 = np.concatenate([np.zeros(n), np.ones(m)])
        status = sx.run(cost1, phase=1)
        if status is not None:
            return LpSolution(status, iterations=sx.iterations, message="phase 1 failed")
        infeas = float(sx.primal()[n:].sum())
        if infeas > FEAS_TOL * (1.0 + np.abs(work.b).max(initial=0.0)):
            y = sx.duals(cost1)
            return LpSolution(Status.INFEASIBLE, farkas=y, iterations=sx.iterations,
                              message=f"phase 1 infeasibility {infeas:.3e}")
        # artificials still basic are pinned at zero for phase 2
        sx.ub[n:] = 0.0
        sx.xB = np.where(sx.basis >= n, 0.0, sx.xB)
    cost2 = np.concatenate([work.c, np.zeros(m)])
    status = sx.run(cost2, phase=2)
    if status is not None:
        return LpSolution(status, iterations=sx.iterations)
    if not sx.refactor():
        return LpSolution(Status.NUMERICAL_FAILURE, iterations=sx.iterations, message="singular final basis")
    y = sx.duals(cost2)
    xt = sx.primal()
    dt = cost2 - sx.full_A().T @ y
    x, d = _recover(work, problem, xt[:n], dt[:n])
    basis = (tuple(int(j) for j in sx.basis), tuple(int(j) for j in np.flatnonzero(sx.at_upper[:n])))
    return LpSolution(Status.OPTIMAL, x=x, duals=y, reduced_costs=d,
                      objective=float(problem.c @ x), basis=basis, iterations=sx.iterations)


def to_mps(problem: LpProblem, name: str = "LP") -> str:
    """Fixed-format MPS dump, for cross-checking with external solvers."""
    m, n = problem.shape
    lines = [f"NAME          {name}", "ROWS", " N  OBJ"]
    lines += [f" E  R{i:07d}" for i in range(m)]
    lines.append("COLUMNS")
    for j in range(n):
        col = f"C{j:07d}"
        if problem.c[j] != 0.0:
            lines.append(f"    {col:<8}  {'OBJ':<8}  {problem.c[j]:>12.6f}")
        for i in np.flatnonzero(problem.A[:, j]):
            lines.append(f"    {col:<8}  {'R%07d' % i:<8}  {problem.A[i, j]:>12.6f}")
    lines.append("RHS")
    for i in np.flatnonzero(problem.b):
        lines.append(f"    {'RHS':<8}  {'R%07d' % i:<8}  {problem.b[i]:>12.6f}")
    lines.append("BOUNDS")
    for j in range(n):
        col = f"C{j:07d}"
        lo, hi = problem.lb[j], problem.ub[j]
        if lo == hi:
            lines.append(f" FX {'BND':<8}  {col:<8}  {lo:>12.6f}")
            continue
        if not np.isfinite(lo):
            lines.append(f" MI {'BND':<8}  {col:<8}")
        elif lo != 0.0:
            lines.append(f" LO {'BND':<8}  {col:<8}  {lo:>12.6f}")
        if np.isfinite(hi):
            lines.append(f" UP {'BND':<8}  {col:<8}  {hi:>12.6f}")
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"
