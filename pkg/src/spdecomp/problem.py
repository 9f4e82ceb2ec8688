"""Two-stage stochastic LP data model, partitioning, sampling and exact evaluation.

The problem is

    min  c'x + sum_i p_i Q_i(x)   s.t.  A x = b,  x >= 0,
    Q_i(x) = min q_i'y  s.t.  W y = h_i - T_i x,  y >= 0,

with a recourse matrix W shared by every scenario.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import lp


class ValidationError(ValueError):
    """Problem data or arguments violate a structural invariant."""


class CompleteRecourseViolation(RuntimeError):
    """A second-stage LP is infeasible at the queried first-stage point."""

    def __init__(self, scenario: int, certificate: np.ndarray, x: np.ndarray | None = None):
        super().__init__(f"second-stage LP of scenario {scenario} is infeasible")
        self.scenario = scenario
        self.certificate = certificate
        self.x = x


def _matrix(a, rows: int | None = None, cols: int | None = None, what: str = "matrix") -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.size == 0:
        arr = arr.reshape(rows or 0, cols or 0)
    if arr.ndim != 2:
        raise ValidationError(f"{what} must be two-dimensional, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows:
        raise ValidationError(f"{what} has {arr.shape[0]} rows, expected {rows}")
    if cols is not None and arr.shape[1] != cols:
        raise ValidationError(f"{what} has {arr.shape[1]} columns, expected {cols}")
    arr.setflags(write=False)
    return arr


def _vector(v, size: int | None = None, what: str = "vector") -> np.ndarray:
    arr = np.array(v, dtype=float).reshape(-1)
    if size is not None and arr.size != size:
        raise ValidationError(f"{what} has length {arr.size}, expected {size}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FirstStage:
    c: np.ndarray
    A: np.ndarray = None
    b: np.ndarray = None

    def __post_init__(self):
        c = _vector(self.c, what="c")
        object.__setattr__(self, "c", c)
        if self.A is None:
            object.__setattr__(self, "A", np.zeros((0, c.size)))
            object.__setattr__(self, "b", np.zeros(0) if self.b is None else self.b)
        object.__setattr__(self, "A", _matrix(self.A, cols=c.size, what="A"))
        object.__setattr__(self, "b", _vector(self.b, self.A.shape[0], what="b"))

    @property
    def n(self) -> int:
        return self.c.size


@dataclass(frozen=True)
class ScenarioData:
    p: float
    q: np.ndarray
    h: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "q", _vector(self.q, what="q"))
        object.__setattr__(self, "h", _vector(self.h, what="h"))
        object.__setattr__(self, "T", _matrix(self.T, rows=self.h.size, what="T"))


@dataclass(frozen=True)
class TwoStageProblem:
    """Immutable two-stage instance; safe to share between threads."""

    first: FirstStage
    W: np.ndarray
    scenarios: tuple

    def __post_init__(self):
        W = _matrix(self.W, what="W")
        object.__setattr__(self, "W", W)
        scen = tuple(self.scenarios)
        object.__setattr__(self, "scenarios", scen)
        if not scen:
            raise ValidationError("at least one scenario is required")
        m2, n2 = W.shape
        n = self.first.n
        for i, s in enumerate(scen):
            if not s.p > 0.0:
                raise ValidationError(f"scenario {i}: probability must be positive, got {s.p}")
            if s.q.size != n2:
                raise ValidationError(f"scenario {i}: q has length {s.q.size}, W has {n2} columns")
            if s.h.size != m2:
                raise ValidationError(f"scenario {i}: h has length {s.h.size}, W has {m2} rows")
            if s.T.shape != (m2, n):
                raise ValidationError(f"scenario {i}: T has shape {s.T.shape}, expected {(m2, n)}")
        total = math.fsum(s.p for s in scen)
        if abs(total - 1.0) > 1e-12:
            raise ValidationError(f"scenario probabilities sum to {total!r}, not 1")

    @property
    def n(self) -> int:
        return self.first.n

    @property
    def N(self) -> int:
        return len(self.scenarios)

    @property
    def recourse_shape(self) -> tuple[int, int]:
        return self.W.shape

    # -- native JSON format ------------------------------------------
    def to_dict(self) -> dict:
        return {
            "first": {
                "c": self.first.c.tolist(),
                "A": self.first.A.tolist(),
                "b": self.first.b.tolist(),
            },
            "W": self.W.tolist(),
            "scenarios": [
                {"p": s.p, "q": s.q.tolist(), "h": s.h.tolist(), "T": s.T.tolist()}
                for s in self.scenarios
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TwoStageProblem":
        try:
            f = data["first"]
            c = f["c"]
            first = FirstStage(c=c, A=f.get("A") or np.zeros((0, len(c))), b=f.get("b") or [])
            W = data["W"]
            n2 = len(W[0]) if W else 0
            scen = [
                ScenarioData(p=s["p"], q=s["q"], h=s["h"],
                             T=s["T"] if s["T"] else np.zeros((len(s["h"]), len(c))))
                for s in data["scenarios"]
            ]
        except (KeyError, TypeError, IndexError) as exc:
            raise ValidationError(f"malformed instance document: {exc!r}") from exc
        return cls(first=first, W=np.asarray(W, dtype=float).reshape(-1, n2), scenarios=scen)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "TwoStageProblem":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def equals(self, other: "TwoStageProblem", tol: float = 0.0) -> bool:
        if self.N != other.N or self.W.shape != other.W.shape or self.n != other.n:
            return False
        close = lambda a, b: a.shape == b.shape and bool(np.all(np.abs(a - b) <= tol))
        if not (close(self.first.c, other.first.c) and close(self.first.A, other.first.A)
                and close(self.first.b, other.first.b) and close(self.W, other.W)):
            return False
        return all(
            abs(s.p - o.p) <= max(tol, 1e-15) and close(s.q, o.q) and close(s.h, o.h) and close(s.T, o.T)
            for s, o in zip(self.scenarios, other.scenarios)
        )


def toy_nv() -> TwoStageProblem:
    """The 'toy-nv' builtin: Q(x) = x + 0.8 max(1-x, 0) + 1.2 max(3-x, 0), minimized at x=3."""
    first = FirstStage(c=[1.0], A=np.zeros((0, 1)), b=[])
    W = [[1.0, -1.0]]
    scen = [
        ScenarioData(p=0.4, q=[2.0, 0.0], h=[1.0], T=[[1.0]]),
        ScenarioData(p=0.6, q=[2.0, 0.0], h=[3.0], T=[[1.0]]),
    ]
    return TwoStageProblem(first=first, W=W, scenarios=scen)


BUILTINS = {"toy-nv": toy_nv}


def random_instance(rng: np.random.Generator, n: int = 3, m2: int = 2, N: int = 8,
                    extra_cols: int = 2, budget_row: bool = True) -> TwoStageProblem:
    """Random instance with complete recourse and a bounded optimum.

    W = [I, -I, R] with positive costs on the +/- identity blocks, so every
    second-stage LP is feasible and bounded for every x; c >= 0 and q >= 0
    keep the master bounded below.
    """
    nx = n + 1 if budget_row else n
    c = np.round(rng.uniform(0.1, 1.0, size=nx), 3)
    if budget_row:
        c[-1] = 0.0
        A = np.ones((1, nx))
        b = [float(np.round(rng.uniform(3.0, 8.0), 3))]
    else:
        A = np.zeros((0, nx))
        b = []
    R = np.round(rng.uniform(-1.0, 1.0, size=(m2, extra_cols)), 3)
    W = np.hstack([np.eye(m2), -np.eye(m2), R])
    scen = []
    for _ in range(N):
        q = np.concatenate([
            np.round(rng.uniform(2.0, 5.0, size=m2), 3),
            np.round(rng.uniform(0.0, 1.0, size=m2), 3),
            np.round(rng.uniform(0.5, 3.0, size=extra_cols), 3),
        ])
        T = np.round(rng.uniform(-0.2, 1.0, size=(m2, nx)), 3)
        if budget_row:
            T[:, -1] = 0.0
        h = np.round(rng.uniform(1.0, 6.0, size=m2), 3)
        scen.append(ScenarioData(p=1.0 / N, q=q, h=h, T=T))
    _fix_probabilities(scen)
    return TwoStageProblem(first=FirstStage(c=c, A=A, b=b), W=W, scenarios=scen)


def _fix_probabilities(scen: list) -> None:
    """Uniform 1/N weights can miss 1 by an ulp; push the residual into the last scenario."""
    N = len(scen)
    total = math.fsum(s.p for s in scen)
    if abs(total - 1.0) > 1e-12 and N:
        last = scen[-1]
        scen[-1] = ScenarioData(p=last.p + (1.0 - total), q=last.q, h=last.h, T=last.T)


# ---------------------------------------------------------------------------
# deterministic equivalent

def build_deterministic_equivalent(problem: TwoStageProblem, fix_x=None) -> lp.LpProblem:
    """Extensive form over (x, y_1, ..., y_N).

    With `fix_x`, the first-stage block is pinned to that point (bounds
    lb = ub = x and the rows A x = b dropped), which turns the optimum
    into Q(x).
    """
    n = problem.n
    m2, n2 = problem.W.shape
    N = problem.N
    ma = problem.first.A.shape[0] if fix_x is None else 0
    nv = n + N * n2
    A = np.zeros((ma + N * m2, nv))
    rhs = np.zeros(ma + N * m2)
    cost = np.zeros(nv)
    cost[:n] = problem.first.c
    if ma:
        A[:ma, :n] = problem.first.A
        rhs[:ma] = problem.first.b
    for i, s in enumerate(problem.scenarios):
        r0 = ma + i * m2
        c0 = n + i * n2
        A[r0:r0 + m2, :n] = s.T
        A[r0:r0 + m2, c0:c0 + n2] = problem.W
        rhs[r0:r0 + m2] = s.h
        cost[c0:c0 + n2] = s.p * s.q
    lb = np.zeros(nv)
    ub = np.full(nv, np.inf)
    if fix_x is not None:
        x = np.asarray(fix_x, dtype=float).reshape(-1)
        if x.size != n:
            raise ValidationError(f"fixed point has length {x.size}, expected {n}")
        lb[:n] = x
        ub[:n] = x
    return lp.LpProblem(c=cost, A=A, b=rhs, lb=lb, ub=ub)


@dataclass
class OracleSolution:
    value: float
    x: np.ndarray
    status: lp.Status


def solve_deterministic_equivalent(problem: TwoStageProblem) -> OracleSolution:
    sol = lp.solve(build_deterministic_equivalent(problem))
    if not sol.optimal:
        return OracleSolution(value=float("nan"), x=np.full(problem.n, np.nan), status=sol.status)
    return OracleSolution(value=sol.objective, x=sol.x[: problem.n].copy(), status=sol.status)


# ---------------------------------------------------------------------------
# exact evaluation

def scenario_lp(problem: TwoStageProblem, i: int, x: np.ndarray) -> lp.LpProblem:
    s = problem.scenarios[i]
    return lp.LpProblem(c=s.q, A=problem.W, b=s.h - s.T @ x)


@dataclass
class Evaluation:
    value: float
    subgradient: np.ndarray
    scenario_values: np.ndarray
    duals: list
    pivots: int = 0


def evaluate_Q(problem: TwoStageProblem, x) -> Evaluation:
    """Q(x) = c'x + sum_i p_i Q_i(x) and the subgradient c - sum_i p_i T_i' pi_i."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != problem.n:
        raise ValidationError(f"point has length {x.size}, expected {problem.n}")
    if np.any(x < -1e-9):
        raise ValidationError("first-stage point must be nonnegative")
    value = float(problem.first.c @ x)
    g = problem.first.c.astype(float).copy()
    values = np.zeros(problem.N)
    duals = []
    pivots = 0
    for i, s in enumerate(problem.scenarios):
        sol = lp.solve(scenario_lp(problem, i, x))
        pivots += sol.iterations
        if sol.status is lp.Status.INFEASIBLE:
            raise CompleteRecourseViolation(i, sol.farkas, x)
        if not sol.optimal:
            raise lp_failure(sol, f"scenario {i}")
        values[i] = sol.objective
        duals.append(sol.duals)
        value += s.p * sol.objective
        g -= s.p * (s.T.T @ sol.duals)
    return Evaluation(value=value, subgradient=g, scenario_values=values, duals=duals, pivots=pivots)


class NumericalFailure(RuntimeError):
    pass


def lp_failure(sol: lp.LpSolution, where: str) -> Exception:
    if sol.status is lp.Status.UNBOUNDED:
        return NumericalFailure(f"{where}: LP unbounded (recourse not bounded below)")
    return NumericalFailure(f"{where}: LP solve ended with {sol.status.value} {sol.message}".rstrip())


# ---------------------------------------------------------------------------
# partitions

@dataclass(frozen=True)
class ClusterPartition:
    """Scenario clusters (0-based index ranges) grouped into chunk tasks."""

    clusters: tuple
    chunks: tuple

    @property
    def T(self) -> int:
        return len(self.clusters)

    @property
    def C(self) -> int:
        return len(self.chunks)

    @property
    def N(self) -> int:
        return sum(len(c) for c in self.clusters)


def _split(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + 1 if k < extra else base for k in range(parts)]


def make_partition(N: int, T: int, C: int) -> ClusterPartition:
    """Contiguous near-equal clusters, consecutive clusters grouped into chunks."""
    if not (1 <= C <= T <= N):
        raise ValidationError(f"need 1 <= C <= T <= N, got N={N}, T={T}, C={C}")
    clusters = []
    start = 0
    for size in _split(N, T):
        clusters.append(tuple(range(start, start + size)))
        start += size
    chunks = []
    start = 0
    for size in _split(T, C):
        chunks.append(tuple(range(start, start + size)))
        start += size
    return ClusterPartition(clusters=tuple(clusters), chunks=tuple(chunks))


# ---------------------------------------------------------------------------
# sampling

@dataclass(frozen=True)
class RandomEntry:
    """One independent discrete random entry of the second-stage data.

    `kind` is "h" (position = (row,)), "T" (position = (row, col)) or
    "q" (position = (col,)).
    """

    kind: str
    position: tuple
    values: tuple
    probs: tuple

    def __post_init__(self):
        if self.kind not in ("h", "T", "q"):
            raise ValidationError(f"unknown random entry kind {self.kind!r}")
        if len(self.values) != len(self.probs) or not self.values:
            raise ValidationError("random entry needs matching, nonempty values and probabilities")
        if any(p < 0 for p in self.probs):
            raise ValidationError("negative outcome probability")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > 1e-12:
            raise ValidationError(f"outcome probabilities sum to {total!r}, not 1")


@dataclass(frozen=True)
class SampledSpec:
    base: TwoStageProblem
    entries: tuple
    N: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.N < 1:
            raise ValidationError("sample size must be at least 1")
        m2, n2 = self.base.W.shape
        limits = {"h": (m2,), "T": (m2, self.base.n), "q": (n2,)}
        for e in self.entries:
            lim = limits[e.kind]
            if len(e.position) != len(lim) or any(not 0 <= p < L for p, L in zip(e.position, lim)):
                raise ValidationError(f"random entry position {e.position} out of range for {e.kind}")


def apply_outcomes(base: ScenarioData, entries: Sequence[RandomEntry], choice: Sequence[int], p: float) -> ScenarioData:
    q, h, T = base.q.copy(), base.h.copy(), base.T.copy()
    for e, k in zip(entries, choice):
        v = e.values[k]
        if e.kind == "h":
            h[e.position[0]] = v
        elif e.kind == "T":
            T[e.position] = v
        else:
            q[e.position[0]] = v
    return ScenarioData(p=p, q=q, h=h, T=T)


def draw_outcomes(entries: Sequence[RandomEntry], N: int, seed: int) -> np.ndarray:
    """(N, len(entries)) matrix of outcome indices, one independent column per entry."""
    rng = np.random.default_rng(np.uint64(seed % 2**64))
    out = np.zeros((N, len(entries)), dtype=np.int64)
    for k, e in enumerate(entries):
        cdf = np.cumsum(e.probs)
        cdf[-1] = 1.0
        out[:, k] = np.searchsorted(cdf, rng.random(N), side="right")
    return out


def sample_instance(spec: SampledSpec) -> TwoStageProblem:
    """N iid scenarios with weight 1/N each; deterministic in the seed."""
    choices = draw_outcomes(spec.entries, spec.N, spec.seed)
    base = spec.base.scenarios[0]
    scen = [apply_outcomes(base, spec.entries, row, 1.0 / spec.N) for row in choices]
    _fix_probabilities(scen)
    return TwoStageProblem(first=spec.base.first, W=spec.base.W, scenarios=scen)
