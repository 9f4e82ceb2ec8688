
import numpy as np
import pytest

from spdecomp.gridsim import (
    CSV_COLUMNS,
    ParallelExecutor,
    SimConfig,
    SimulationStalled,
    WorkerFailure,
    WorkerProfile,
    max_workers,
    parallel_efficiency,
    run_parallel,
    simulate,
    stats_csv,
    worker_series_csv,
)
from spdecomp.problem import ValidationError, make_partition
from spdecomp.recourse import execute_task
from spdecomp.solvers import CONTROLLERS, SerialExecutor, SolverConfig, run
from spdecomp.stats import RunStats

from conftest import oracle_case


@pytest.mark.parametrize("K,C,alg,expected", [
    (6, 50, "ATR", 175), (3, 10, "ATR", 25), (1, 25, "ALS", 50), (1, 300, "ALS", 200),
    (9, 4, "TR", 25), (1, 100, "LS", 100), (5, 100, "ATR", 200),
])
def test_max_workers(K, C, alg, expected):
    assert max_workers(K, C, alg) == expected


def test_max_workers_validation():
    with pytest.raises(ValidationError):
        max_workers(0, 5)


def test_parallel_efficiency_definition():
    assert parallel_efficiency(RunStats(busy_time=74.0, owned_time=100.0)) == (pytest.approx(0.74), True)
    assert parallel_efficiency(RunStats(busy_time=5.0, owned_time=5.0)) == (1.0, True)
    assert parallel_efficiency(RunStats()) == (0.0, False)


def _sim(method="ATR", seed=0, cfg=None, **sim):
    prob, part, orc = oracle_case(4)
    ctrl = CONTROLLERS[method](prob, part, cfg or SolverConfig(K=3, sigma=0.6))
    res, stats = simulate(ctrl, SimConfig(seed=seed, **sim))
    return res, stats, orc


def test_same_seed_same_bytes():
    churn = dict(suspension_rate=0.05, mean_lifetime=20.0, reschedule_timeout=3.0)
    a, sa, _ = _sim(seed=3, **churn)
    b, sb, _ = _sim(seed=3, **churn)
    ca = stats_csv([("r", sa, 3, 2, 4)]) + worker_series_csv(sa)
    cb = stats_csv([("r", sb, 3, 2, 4)]) + worker_series_csv(sb)
    assert ca == cb
    assert all(np.array_equal(p, q) for p, q in zip(a.points, b.points)) and len(a.points) == len(b.points)
    c, sc, _ = _sim(seed=4, **churn)
    assert stats_csv([("r", sc, 3, 2, 4)]) != stats_csv([("r", sa, 3, 2, 4)])


@pytest.mark.parametrize("seed", range(6))
def test_churn_runs_converge_with_bounded_efficiency(seed):
    res, st, orc = _sim(seed=seed, suspension_rate=0.1, mean_suspension=5.0, mean_lifetime=15.0,
                        arrival_rate=2.0, reschedule_timeout=2.0)
    assert res.converged
    assert abs(res.objective - orc.value) <= 1e-5 * (1 + abs(orc.value))
    assert 0.0 <= st.parallel_efficiency <= 1.0
    # busy-time conservation
    assert sum(ex.spent for ex in st.executions) == pytest.approx(st.busy_time, abs=1e-9)
    # applied at most once, and every applied id was dispatched
    applied = [e for e in res.trace if e["event"] == "result"]
    assert len(applied) == len(st.applied_task_ids)
    assert st.applied_task_ids <= st.dispatched_task_ids


def test_single_worker_efficiency(toy):
    part = make_partition(2, 2, 1)
    prof = [WorkerProfile(id=0, speed=1.0)]
    ctrl = CONTROLLERS["LS"](toy, part, SolverConfig())
    res, st = simulate(ctrl, SimConfig(profiles=prof, benchmark_work=0.0, latency=0.0, unit_cost=1.0,
                                       master_unit_cost=0.5, master_overhead=0.25))
    direct = run("LS", toy, part, SolverConfig())
    assert res.objective == direct.objective and len(res.points) == len(direct.points)
    task_time = sum(ex.duration for ex in st.executions)
    # one task per point: worker and master strictly alternate
    assert st.wall_clock == pytest.approx(task_time + st.master_time)
    assert st.parallel_efficiency == pytest.approx(task_time / (task_time + st.master_time))


def test_two_workers_run_two_chunks_concurrently(toy, toy_part):
    prof = [WorkerProfile(id=0), WorkerProfile(id=1)]
    ctrl = CONTROLLERS["LS"](toy, toy_part, SolverConfig())
    res, st = simulate(ctrl, SimConfig(profiles=prof, benchmark_work=0.0))
    first, second = st.executions[:2]
    assert first.started == second.started
    assert {first.worker, second.worker} == {0, 1}
    assert first.task.point_id == second.task.point_id == 0


def test_worker_loss_reschedules_task(toy, toy_part):
    # worker 0 is fastest and grabs the first task, then leaves before finishing it
    prof = [WorkerProfile(id=0, speed=1.0, departure=2.5), WorkerProfile(id=1, speed=2.0)]
    ctrl = CONTROLLERS["ATR"](toy, toy_part, SolverConfig(K=1, sigma=1.0))
    res, st = simulate(ctrl, SimConfig(profiles=prof, benchmark_work=10.0, unit_cost=0.1, latency=1.0))
    assert res.objective == pytest.approx(3.0)
    lost = [ex for ex in st.executions if ex.worker == 0 and ex.spent < ex.duration]
    assert lost, "the departing worker should have lost a task"
    redo = [ex for ex in st.executions if ex.task.task_id == lost[0].task.task_id and ex is not lost[0]]
    assert redo and redo[0].worker == 1
    keys = [(e["point"], c) for e in res.trace if e["event"] == "result" for c in e["clusters"]]
    assert len(keys) == len(set(keys))


def test_suspension_with_timeout_duplicates_and_discards(toy, toy_part):
    prof = [WorkerProfile(id=0, speed=1.0, suspensions=[(2.5, 50.0)]), WorkerProfile(id=1, speed=3.0)]
    ctrl = CONTROLLERS["TR"](toy, toy_part, SolverConfig())
    res, st = simulate(ctrl, SimConfig(profiles=prof, benchmark_work=10.0, unit_cost=0.1, latency=1.0,
                                       reschedule_timeout=1.0))
    assert res.objective == pytest.approx(3.0)
    ids = [ex.task.task_id for ex in st.executions]
    assert len(ids) > len(set(ids))          # a duplicate was launched
    keys = [(e["point"], c) for e in res.trace if e["event"] == "result" for c in e["clusters"]]
    assert len(keys) == len(set(keys))


def test_no_workers_stalls(toy, toy_part):
    ctrl = CONTROLLERS["LS"](toy, toy_part, SolverConfig())
    with pytest.raises(SimulationStalled):
        simulate(ctrl, SimConfig(profiles=[]))
    ctrl = CONTROLLERS["LS"](toy, toy_part, SolverConfig())
    with pytest.raises(SimulationStalled):
        simulate(ctrl, SimConfig(initial_workers=0, arrival_rate=0.0))


def test_profile_validation():
    with pytest.raises(ValidationError):
        SimConfig(profiles=[WorkerProfile(id=0, speed=9.0)])
    with pytest.raises(ValidationError):
        SimConfig(profiles=[WorkerProfile(id=0, suspensions=[(5.0, 6.0), (5.5, 7.0)])])
    with pytest.raises(ValidationError):
        SimConfig(suspension_rate=-1.0)


def test_speeds_respect_spread():
    _, st, _ = _sim(seed=2, speed_spread_max=3.0, mean_lifetime=10.0, arrival_rate=1.0)
    assert st.max_workers <= 25


# -- real threads ---------------------------------------------------------------

def test_one_thread_matches_serial():
    prob, part, _ = oracle_case(3)
    for method in ("ALS", "ATR"):
        cfg = SolverConfig(K=2, sigma=0.5)
        a = run(method, prob, part, cfg, SerialExecutor())
        b = run(method, prob, part, cfg, ParallelExecutor(1))
        assert len(a.points) == len(b.points)
        assert all(np.array_equal(p, q) for p, q in zip(a.points, b.points))


def test_threads_reach_toy_optimum(toy, toy_part):
    for _ in range(20):
        ctrl = CONTROLLERS["ATR"](toy, toy_part, SolverConfig(K=3))
        res, st = run_parallel(ctrl, 4)
        assert res.objective == pytest.approx(3.0, abs=1e-5)
        assert 0.0 <= st.parallel_efficiency <= 1.0


def test_failed_task_is_retried_once(toy, toy_part):
    calls = {}

    def flaky(problem, partition, task):
        calls[task.task_id] = calls.get(task.task_id, 0) + 1
        if task.task_id == 1 and calls[task.task_id] == 1:
            raise RuntimeError("worker crashed")
        return execute_task(problem, partition, task)

    res = run("TR", toy, toy_part, SolverConfig(), ParallelExecutor(2, task_fn=flaky))
    assert res.objective == pytest.approx(3.0) and calls[1] == 2


def test_second_failure_aborts(toy, toy_part):
    def broken(problem, partition, task):
        if task.task_id == 0:
            raise RuntimeError("always fails")
        return execute_task(problem, partition, task)

    with pytest.raises(WorkerFailure, match="task 0"):
        run("TR", toy, toy_part, SolverConfig(), ParallelExecutor(2, task_fn=broken))


def test_csv_schema():
    text = stats_csv([("ATR-1", RunStats(points_evaluated=7, max_cuts=12), 3, 10, 100)])
    header, row = text.strip().split("\n")
    assert header == ",".join(CSV_COLUMNS)
    assert header == ("run,points_evaluated,sigma_or_K,tasks_C,clusters_T,max_procs,avg_procs,"
                      "parallel_efficiency,max_cuts,master_time,wall_clock")
    assert row.split(",")[:5] == ["ATR-1", "7", "3", "10", "100"]
