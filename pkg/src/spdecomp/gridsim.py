"""Simulated and real worker pools.

`Simulator` is a single-threaded discrete-event model of an opportunistic
grid: workers arrive up to a cap, run a benchmark task, may be
suspended by their owners and may leave for good. Tasks go to the idle
worker with the fastest benchmark. Completed results queue at a master
that handles them one at a time, charging simulated time for each
master LP pivot. Everything is driven by one seeded generator, so a
seed fixes the whole run.

`ParallelExecutor` runs the same tasks on a thread pool, which gives
real (nondeterministic) interleavings.
"""

from __future__ import annotations

import csv
import heapq
import io
import logging
import math
import time
from collections import deque
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field

import numpy as np

from .problem import ValidationError
from .recourse import execute_task
from .stats import CSV_COLUMNS, RunStats

_log = logging.getLogger(__name__)

__all__ = [
    "CSV_COLUMNS", "ParallelExecutor", "RunStats", "SimConfig", "SimulationStalled", "Simulator",
    "WorkerFailure", "WorkerProfile", "max_workers", "parallel_efficiency", "run_parallel", "simulate",
    "stats_csv", "worker_series_csv",
]


class SimulationStalled(RuntimeError):
    pass


class WorkerFailure(RuntimeError):
    pass


def mid(a, b, c):
    return sorted((a, b, c))[1]


def max_workers(K: int, C: int, algorithm: str = "ATR") -> int:
    """Worker request: mid(25, 200, floor((K+1)C/2)), or mid(25, 200, 2C) for ALS."""
    if K < 1 or C < 1:
        raise ValidationError("K and C must be positive")
    if algorithm.upper() == "ALS":
        return mid(25, 200, 2 * C)
    if algorithm.upper() in ("LS", "TR"):
        K = 1
    return mid(25, 200, (K + 1) * C // 2)


def parallel_efficiency(stats: RunStats) -> tuple[float, bool]:
    """(busy / owned, defined). Zero owned time gives (0.0, False)."""
    if stats.owned_time <= 0:
        return 0.0, False
    return min(1.0, stats.busy_time / stats.owned_time), True


@dataclass
class WorkerProfile:
    id: int
    speed: float = 1.0  # time multiplier in [1, speed_spread]; 1 is the fastest machine
    arrival: float = 0.0
    departure: float = math.inf
    suspensions: list = field(default_factory=list)
    benchmark_time: float = float("nan")

    def validate(self, spread: float) -> None:
        if not 1.0 <= self.speed <= spread:
            raise ValidationError(f"worker {self.id}: speed {self.speed} outside [1, {spread}]")
        last = self.arrival
        for a, b in self.suspensions:
            if not last <= a < b:
                raise ValidationError(f"worker {self.id}: suspension intervals must be disjoint and increasing")
            last = b
        if self.departure < self.arrival:
            raise ValidationError(f"worker {self.id}: departs before arriving")


@dataclass
class SimConfig:
    seed: int = 0
    initial_workers: int | None = None
    arrival_rate: float = 0.5
    mean_lifetime: float = math.inf
    suspension_rate: float = 0.0
    mean_suspension: float = 30.0
    speed_spread_max: float = 7.0
    unit_cost: float = 0.01
    latency: float = 0.5
    benchmark_work: float = 100.0
    master_unit_cost: float = 0.001
    master_overhead: float = 0.05
    max_workers: int | None = None
    reschedule_timeout: float | None = None
    time_cap: float = 1e8
    profiles: list | None = None

    def __post_init__(self):
        for name in ("arrival_rate", "mean_lifetime", "suspension_rate", "mean_suspension", "unit_cost",
                     "latency", "benchmark_work", "master_unit_cost", "master_overhead"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")
        if self.speed_spread_max < 1:
            raise ValidationError("speed_spread_max must be at least 1")
        if self.max_workers is not None and self.max_workers < 1:
            raise ValidationError("max_workers must be positive")
        if self.initial_workers is not None and self.initial_workers < 0:
            raise ValidationError("initial_workers must be nonnegative")
        if self.reschedule_timeout is not None and self.reschedule_timeout <= 0:
            raise ValidationError("reschedule_timeout must be positive")
        if self.profiles is not None:
            for p in self.profiles:
                p.validate(self.speed_spread_max)


class _Worker:
    __slots__ = ("profile", "present", "suspended", "benchmarked", "job", "busy", "owned", "since",
                 "own_since")

    def __init__(self, profile):
        self.profile = profile
        self.present = False
        self.suspended = False
        self.benchmarked = False
        self.job = None
        self.busy = 0.0
        self.owned = 0.0
        self.since = 0.0
        self.own_since = 0.0


class _Execution:
    __slots__ = ("task", "result", "worker", "duration", "remaining", "started", "version", "spent", "live")

    def __init__(self, task, result, worker, duration, now):
        self.task = task
        self.result = result
        self.worker = worker
        self.duration = duration
        self.remaining = duration
        self.started = now
        self.version = 0
        self.spent = 0.0
        self.live = True


class Simulator:
    """Executor that drives a controller through simulated time."""

    def __init__(self, config: SimConfig | None = None):
        self.config = config or SimConfig()

    # -- plumbing ----------------------------------------------------------
    def _push(self, t, kind, *payload):
        heapq.heappush(self._events, (t, self._seq, kind, payload))
        self._seq += 1

    def run(self, controller) -> RunStats:
        cfg = self.config
        self.ctrl = controller
        self.rng = np.random.default_rng(cfg.seed)
        self._events: list = []
        self._seq = 0
        self.now = 0.0
        self.pool: deque = deque()
        self.workers: dict[int, _Worker] = {}
        self.executions: list[_Execution] = []
        self.applied: set = set()
        self.dispatched: set = set()
        self.inbox: deque = deque()
        self.master_busy = False
        self.master_time = 0.0
        self.master_free_at = 0.0
        self.discarded = 0
        self.series = [(0.0, 0)]
        self.count = 0
        self.peak = 0
        self.area = 0.0
        self.last_change = 0.0
        self._next_wid = 0
        algo = getattr(controller, "name", "ATR")
        K = getattr(controller.config, "K", 1)
        self.cap = cfg.max_workers or max_workers(K, controller.partition.C, algo)

        if cfg.profiles is not None:
            for p in cfg.profiles:
                self.workers[p.id] = _Worker(p)
                self._push(p.arrival, "arrive", p.id)
                if math.isfinite(p.departure):
                    self._push(p.departure, "depart", p.id)
        else:
            n0 = self.cap if cfg.initial_workers is None else min(cfg.initial_workers, self.cap)
            for _ in range(n0):
                self._spawn(0.0)
            if cfg.arrival_rate > 0:
                self._push(self.rng.exponential(1 / cfg.arrival_rate), "tick")

        # the master starts by generating the first tasks
        pivots0 = controller.master_pivots
        tasks = controller.start()
        self._master_finish_at(self._master_cost(pivots0), tasks)

        while self._events and not controller.done:
            t, _, kind, payload = heapq.heappop(self._events)
            if t > cfg.time_cap:
                raise SimulationStalled(
                    f"simulated time passed {cfg.time_cap:g}s with the run unfinished "
                    f"({self.count} workers present, {len(self.pool)} tasks waiting)")
            self.now = t
            getattr(self, "_on_" + kind)(*payload)
            self._dispatch()
        if not controller.done:
            if self.pool or self.inbox or any(w.job is not None for w in self.workers.values()):
                raise SimulationStalled(
                    f"no events left at t={self.now:g}s with {len(self.pool)} tasks waiting; "
                    "the pool never had a usable worker")
            controller.drained()
        # the run ends when the master has finished its last step
        self.now = max(self.now, self.master_free_at)
        return self._stats()

    def _master_cost(self, pivots_before) -> float:
        cfg = self.config
        return (self.ctrl.master_pivots - pivots_before) * cfg.master_unit_cost + cfg.master_overhead

    def _master_finish_at(self, cost, tasks):
        self.master_busy = True
        self.master_time += cost
        self.master_free_at = self.now + cost
        self._push(self.now + cost, "master_done", tuple(tasks))

    # -- workers -----------------------------------------------------------
    def _spawn(self, t):
        cfg = self.config
        wid = self._next_wid
        self._next_wid += 1
        speed = float(self.rng.uniform(1.0, cfg.speed_spread_max))
        depart = t + self.rng.exponential(cfg.mean_lifetime) if math.isfinite(cfg.mean_lifetime) else math.inf
        prof = WorkerProfile(id=wid, speed=speed, arrival=t, departure=depart)
        self.workers[wid] = _Worker(prof)
        self._push(t, "arrive", wid)
        if math.isfinite(depart):
            self._push(depart, "depart", wid)

    def _set_count(self, delta):
        self.area += self.count * (self.now - self.last_change)
        self.last_change = self.now
        self.count += delta
        self.peak = max(self.peak, self.count)
        self.series.append((self.now, self.count))

    def _on_tick(self):
        cfg = self.config
        if self.count < self.cap:
            self._spawn(self.now)
        self._push(self.now + self.rng.exponential(1 / cfg.arrival_rate), "tick")

    def _on_arrive(self, wid):
        cfg = self.config
        w = self.workers[wid]
        if w.present or self.now >= w.profile.departure:
            return
        w.present = True
        w.own_since = self.now
        self._set_count(+1)
        bench = cfg.benchmark_work * cfg.unit_cost * w.profile.speed + cfg.latency
        w.profile.benchmark_time = bench
        self._push(self.now + bench, "bench_done", wid)
        if cfg.profiles is not None:
            for a, b in w.profile.suspensions:
                self._push(a, "suspend", wid)
                self._push(b, "resume", wid)
        elif cfg.suspension_rate > 0:
            self._push(self.now + self.rng.exponential(1 / cfg.suspension_rate), "suspend", wid)

    def _on_bench_done(self, wid):
        w = self.workers[wid]
        if w.present:
            w.benchmarked = True

    def _on_suspend(self, wid):
        cfg = self.config
        w = self.workers[wid]
        if not w.present or w.suspended:
            return
        w.suspended = True
        w.owned += self.now - w.own_since
        ex = w.job
        if ex is not None:
            ran = self.now - w.since
            w.busy += ran
            ex.spent += ran
            ex.remaining -= ran
            ex.version += 1
            if cfg.reschedule_timeout is not None:
                self._push(self.now + cfg.reschedule_timeout, "timeout", wid, ex.version, id(ex))
        if cfg.profiles is None:
            self._push(self.now + self.rng.exponential(cfg.mean_suspension), "resume", wid)

    def _on_resume(self, wid):
        cfg = self.config
        w = self.workers[wid]
        if not w.present or not w.suspended:
            return
        w.suspended = False
        w.own_since = self.now
        ex = w.job
        if ex is not None:
            w.since = self.now
            self._push(self.now + ex.remaining, "task_done", wid, ex.version, id(ex))
        if cfg.profiles is None and cfg.suspension_rate > 0:
            self._push(self.now + self.rng.exponential(1 / cfg.suspension_rate), "suspend", wid)

    def _on_timeout(self, wid, version, ex_id):
        w = self.workers[wid]
        ex = w.job
        if ex is None or id(ex) != ex_id or ex.version != version or not w.suspended:
            return
        if ex.task.task_id not in self.applied:
            # duplicate the stuck task; whichever copy finishes first is applied
            self.pool.appendleft(ex.task)

    def _on_depart(self, wid):
        w = self.workers[wid]
        if not w.present:
            return
        if not w.suspended:
            w.owned += self.now - w.own_since
        ex = w.job
        if ex is not None:
            if not w.suspended:
                ran = self.now - w.since
                w.busy += ran
                ex.spent += ran
            ex.live = False
            w.job = None
            if ex.task.task_id not in self.applied and not any(
                    t.task_id == ex.task.task_id for t in self.pool):
                self.pool.appendleft(ex.task)
        w.present = False
        self._set_count(-1)

    def _on_task_done(self, wid, version, ex_id):
        w = self.workers[wid]
        ex = w.job
        if ex is None or id(ex) != ex_id or ex.version != version or w.suspended:
            return
        ran = self.now - w.since
        w.busy += ran
        ex.spent += ran
        ex.live = False
        w.job = None
        self.inbox.append(ex)
        if not self.master_busy:
            self._master_next()

    # -- master ------------------------------------------------------------
    def _master_next(self):
        while self.inbox:
            ex = self.inbox.popleft()
            tid = ex.task.task_id
            if tid in self.applied or self.ctrl.done:
                self.discarded += 1
                continue
            self.applied.add(tid)
            before = self.ctrl.master_pivots
            tasks = self.ctrl.on_result(ex.result)
            self._master_finish_at(self._master_cost(before), tasks)
            return
        self.master_busy = False

    def _on_master_done(self, tasks):
        for t in tasks:
            self.dispatched.add(t.task_id)
        self.pool.extend(tasks)
        self.master_busy = False
        self._master_next()

    def _dispatch(self):
        if not self.pool:
            return
        idle = [w for w in self.workers.values()
                if w.present and w.benchmarked and not w.suspended and w.job is None]
        if not idle:
            return
        idle.sort(key=lambda w: (w.profile.benchmark_time, w.profile.id))
        cfg = self.config
        for w in idle:
            while self.pool and self.pool[0].task_id in self.applied:
                self.pool.popleft()
            if not self.pool:
                break
            task = self.pool.popleft()
            res = execute_task(self.ctrl.problem, self.ctrl.partition, task)
            dur = res.work_units * cfg.unit_cost * w.profile.speed + cfg.latency
            ex = _Execution(task, res, w.profile.id, dur, self.now)
            self.executions.append(ex)
            w.job = ex
            w.since = self.now
            self._push(self.now + dur, "task_done", w.profile.id, ex.version, id(ex))

    # -- results -----------------------------------------------------------
    def _stats(self) -> RunStats:
        end = self.now
        self.area += self.count * (end - self.last_change)
        busy = owned = 0.0
        for w in self.workers.values():
            b, o = w.busy, w.owned
            if w.present and not w.suspended:
                o += end - w.own_since
                if w.job is not None:
                    b += end - w.since
                    w.job.spent += end - w.since
            busy += b
            owned += o
        st = RunStats(
            master_time=self.master_time,
            wall_clock=end,
            avg_workers=self.area / end if end > 0 else 0.0,
            max_workers=self.peak,
            busy_time=busy,
            owned_time=owned,
            tasks_executed=len(self.executions),
            results_discarded=self.discarded,
            total_worker_cpu=busy,
            worker_series=list(self.series),
        )
        st.parallel_efficiency, st.efficiency_defined = parallel_efficiency(st)
        st.executions = self.executions
        st.applied_task_ids = set(self.applied)
        st.dispatched_task_ids = set(self.dispatched)
        return st


def simulate(controller, sim_config: SimConfig | None = None):
    """Run `controller` on a simulated pool; returns (RunResult, RunStats)."""
    stats = Simulator(sim_config).run(controller)
    return controller.result(stats), stats


class ParallelExecutor:
    """Thread-pool executor. Results are handed to the controller one at a
    time in submission order among those already finished. A failing task
    is retried once; a second failure aborts the run."""

    def __init__(self, thread_count: int = 4, task_fn=None):
        if thread_count < 1:
            raise ValidationError("thread_count must be at least 1")
        self.thread_count = thread_count
        self.task_fn = task_fn or execute_task

    def _timed(self, problem, partition, task):
        t0 = time.perf_counter()
        res = self.task_fn(problem, partition, task)
        return res, time.perf_counter() - t0

    def run(self, controller) -> RunStats:
        stats = RunStats()
        t0 = time.perf_counter()
        busy = 0.0
        retried: set = set()
        problem, partition = controller.problem, controller.partition
        with ThreadPoolExecutor(max_workers=self.thread_count) as pool:
            inflight: dict = {}

            def submit(task):
                inflight[pool.submit(self._timed, problem, partition, task)] = task

            for task in controller.start():
                submit(task)
            while inflight and not controller.done:
                finished, _ = wait(list(inflight), return_when=FIRST_COMPLETED)
                order = [f for f in inflight if f in finished]
                for fut in order:
                    task = inflight.pop(fut)
                    if controller.done:
                        stats.results_discarded += 1
                        continue
                    try:
                        res, spent = fut.result()
                    except Exception as exc:
                        if task.task_id in retried:
                            for f in inflight:
                                f.cancel()
                            raise WorkerFailure(
                                f"task {task.task_id} (point {task.point_id}, clusters {task.cluster_ids}) "
                                f"failed twice: {exc!r}") from exc
                        _log.warning("task %d failed (%r); retrying once", task.task_id, exc)
                        retried.add(task.task_id)
                        submit(task)
                        continue
                    busy += spent
                    stats.tasks_executed += 1
                    for t in controller.on_result(res):
                        submit(t)
            for f in inflight:
                f.cancel()
            stats.results_discarded += len(inflight)
        if not controller.done:
            controller.drained()
        wall = time.perf_counter() - t0
        stats.wall_clock = wall
        stats.busy_time = busy
        stats.owned_time = wall * self.thread_count
        stats.total_worker_cpu = busy
        stats.max_workers = self.thread_count
        stats.avg_workers = float(self.thread_count)
        stats.parallel_efficiency, stats.efficiency_defined = parallel_efficiency(stats)
        return stats


def run_parallel(controller, thread_count: int = 4):
    stats = ParallelExecutor(thread_count).run(controller)
    return controller.result(stats), stats


def stats_csv(rows, header: bool = True) -> str:
    """rows: iterable of (label, RunStats, sigma_or_K, C, T)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(CSV_COLUMNS)
    for label, st, sk, C, T in rows:
        w.writerow(st.csv_row(label, sk, C, T))
    return buf.getvalue()


def worker_series_csv(stats: RunStats) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("time", "workers"))
    for t, n in stats.worker_series:
        w.writerow((f"{t:.6f}", n))
    return buf.getvalue()
