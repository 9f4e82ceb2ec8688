"""In-process executors.

`SerialExecutor` delivers results in dispatch order. `ScriptedExecutor`
picks the next task to complete at random from everything in flight,
which is how the asynchronous controllers get exercised under arbitrary
interleavings without a simulator.
"""

from __future__ import annotations

import time
from collections import deque

import numpy as np

from ..recourse import execute_task
from ..stats import RunStats


class SerialExecutor:
    def run(self, controller) -> RunStats:
        stats = RunStats()
        t0 = time.perf_counter()
        pending = deque(controller.start())
        while pending and not controller.done:
            task = pending.popleft()
            res = execute_task(controller.problem, controller.partition, task)
            stats.tasks_executed += 1
            tm = time.perf_counter()
            pending.extend(controller.on_result(res))
            stats.master_time += time.perf_counter() - tm
        stats.results_discarded = len(pending)
        controller.drained()
        stats.wall_clock = time.perf_counter() - t0
        stats.max_workers = 1
        stats.avg_workers = 1.0
        stats.efficiency_defined = False
        return stats


class ScriptedExecutor:
    """Completes in-flight tasks in a seeded random order.

    `order`, if given, is a callable (rng, pending_tasks) -> index that
    overrides the uniform choice.
    """

    def __init__(self, seed: int = 0, order=None):
        self.seed = seed
        self.order = order

    def run(self, controller) -> RunStats:
        rng = np.random.default_rng(self.seed)
        stats = RunStats()
        t0 = time.perf_counter()
        pending = list(controller.start())
        while pending and not controller.done:
            idx = self.order(rng, pending) if self.order else int(rng.integers(len(pending)))
            task = pending.pop(idx)
            res = execute_task(controller.problem, controller.partition, task)
            stats.tasks_executed += 1
            tm = time.perf_counter()
            pending.extend(controller.on_result(res))
            stats.master_time += time.perf_counter() - tm
        stats.results_discarded = len(pending)
        controller.drained()
        stats.wall_clock = time.perf_counter() - t0
        stats.efficiency_defined = False
        return stats
