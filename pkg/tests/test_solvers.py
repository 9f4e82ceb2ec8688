import math

import numpy as np
import pytest

from spdecomp.problem import (
    CompleteRecourseViolation,
    FirstStage,
    ScenarioData,
    TwoStageProblem,
    ValidationError,
    make_partition,
    random_instance,
)
from spdecomp.solvers import (
    AsyncTrustRegion,
    RadiusState,
    ScriptedExecutor,
    SerialExecutor,
    SolverConfig,
    Termination,
    default_start,
    read_trace,
    reduce_delta_atr,
    reduce_delta_tr,
    run,
    write_trace,
)

from conftest import oracle_case


@pytest.mark.parametrize("kw", [
    dict(xi=0.0), dict(xi=0.5), dict(sigma=0.0), dict(sigma=1.5), dict(K=0), dict(K=1.5),
    dict(delta0=0.0), dict(delta0=2e3), dict(eta=1.0), dict(max_iterations=0),
    dict(theta_floor=-math.inf), dict(T=0),
])
def test_config_validation(kw):
    with pytest.raises(ValidationError):
        SolverConfig(**kw)


# -- radius rules -------------------------------------------------------------

def test_reduce_large_rho_shrinks_by_at_most_four():
    st = RadiusState(delta=2.0)
    rho = reduce_delta_tr(st, q_candidate=14.0, q_center=10.0, m=9.0)
    assert rho == 4.0 and st.delta == 0.5 and st.counter == 0
    st = RadiusState(delta=1.0)
    reduce_delta_tr(st, q_candidate=13.5, q_center=10.0, m=9.0)     # rho = 3.5
    assert st.delta == 1.0 / 3.5 and st.counter == 0


def test_reduce_radius_factor_below_one():
    st = RadiusState(delta=0.5)
    rho = reduce_delta_tr(st, q_candidate=20.0, q_center=10.0, m=9.0)
    assert rho == 5.0 and st.delta == 0.125


def test_reduce_after_three_moderate_failures():
    st = RadiusState(delta=1.0)
    for expected_counter in (1, 2):
        reduce_delta_tr(st, q_candidate=12.0, q_center=10.0, m=9.0)   # rho = 2
        assert st.delta == 1.0 and st.counter == expected_counter
    reduce_delta_tr(st, q_candidate=12.0, q_center=10.0, m=9.0)
    assert st.delta == 0.5 and st.counter == 0


def test_reduce_small_rho_is_noop():
    st = RadiusState(delta=1.0)
    reduce_delta_tr(st, q_candidate=10.5, q_center=10.0, m=9.0)       # rho = 0.5
    assert st.delta == 1.0 and st.counter == 1
    reduce_delta_tr(st, q_candidate=9.9, q_center=10.0, m=9.0)        # rho < 0
    assert st.delta == 1.0 and st.counter == 1
    reduce_delta_tr(st, q_candidate=10.5, q_center=10.0, m=9.0)
    reduce_delta_tr(st, q_candidate=10.5, q_center=10.0, m=9.0)       # counter 3 but rho <= 1
    assert st.delta == 1.0 and st.counter == 3


def test_reduce_atr_only_shrinks_current_radius():
    st = RadiusState(delta=0.3)
    reduce_delta_atr(st, delta_q=1.0, parent=2, q_candidate=14.0, q_parent=10.0, m_q=9.0)
    assert st.delta == 0.25
    st = RadiusState(delta=0.3)
    reduce_delta_atr(st, delta_q=1.0, parent=2, q_candidate=10.5, q_parent=10.0, m_q=9.0)
    assert st.delta == 0.3 and st.counter == 1
    st = RadiusState(delta=0.3)
    assert reduce_delta_atr(st, 1.0, -1, 14.0, 10.0, 9.0) is None
    assert st.delta == 0.3 and st.counter == 0


@pytest.mark.parametrize("method", ["TR", "ATR"])
def test_radius_doubles_up_to_cap(toy, toy_part, method):
    cfg = SolverConfig(delta0=0.25, delta_hi=0.5, sigma=1.0, K=1)
    res = run(method, toy, toy_part, cfg)
    # x^0 becoming ATR's first incumbent is not a trust-region step
    deltas = [e["delta"] for e in res.trace if e["event"] == "accept" and e["point"] != 0]
    assert deltas[:2] == [0.5, 0.5]
    assert res.objective == pytest.approx(3.0)


# -- degeneracy identities ----------------------------------------------------

@pytest.mark.parametrize("seed", range(6))
def test_als_with_sigma_one_is_ls(seed):
    prob, part, _ = oracle_case(seed)
    a = run("LS", prob, part, SolverConfig(), SerialExecutor())
    b = run("ALS", prob, part, SolverConfig(sigma=1.0), SerialExecutor())
    assert len(a.points) == len(b.points)
    assert all(np.array_equal(p, q) for p, q in zip(a.points, b.points))
    assert a.termination == b.termination and a.objective == b.objective


@pytest.mark.parametrize("seed", range(6))
def test_atr_with_one_point_is_tr(seed):
    prob, part, _ = oracle_case(seed)
    a = run("TR", prob, part, SolverConfig(), SerialExecutor())
    b = run("ATR", prob, part, SolverConfig(K=1, sigma=1.0), SerialExecutor())
    assert len(a.points) == len(b.points)
    assert all(np.array_equal(p, q) for p, q in zip(a.points, b.points))
    assert a.objective == b.objective


# -- termination --------------------------------------------------------------

def _flat_problem():
    # no recourse cost: the first-stage optimum is already optimal
    s = ScenarioData(p=1.0, q=[0.0, 0.0], h=[1.0], T=[[1.0]])
    return TwoStageProblem(FirstStage(c=[1.0]), [[1.0, -1.0]], [s])


@pytest.mark.parametrize("method", ["LS", "TR"])
def test_optimal_at_start(method):
    res = run(method, _flat_problem(), make_partition(1, 1, 1), SolverConfig())
    assert res.termination is Termination.OPTIMAL_AT_START
    assert res.iterations == 1 and res.objective == 0.0


def test_toy_from_the_optimum_needs_a_second_master(toy, toy_part):
    # at x = 3 the scenario dual is degenerate (pi = 0), so the first model is not tight
    res = run("TR", toy, toy_part, SolverConfig(), x0=[3.0])
    assert res.termination is Termination.CONVERGED
    assert res.objective == pytest.approx(3.0) and res.iterations == 2


@pytest.mark.parametrize("method", ["LS", "ALS", "TR", "ATR"])
def test_iteration_cap(method):
    prob, part, _ = oracle_case(9)
    res = run(method, prob, part, SolverConfig(max_iterations=1, K=2))
    assert res.termination is Termination.ITERATION_CAP
    assert res.iterations == 1


def test_drained_controller_reports_reason(toy, toy_part):
    ctrl = AsyncTrustRegion(toy, toy_part, SolverConfig())
    ctrl.start()
    ctrl.drained()
    assert ctrl.termination is Termination.BASKET_DRAINED


def test_partition_must_match(toy):
    with pytest.raises(ValidationError):
        run("LS", toy, make_partition(3, 1, 1))
    with pytest.raises(ValidationError):
        run("LS", toy, make_partition(2, 2, 2), x0=[1.0, 2.0])
    with pytest.raises(ValueError):
        run("XX", toy)


def test_missing_complete_recourse_propagates():
    s = ScenarioData(p=1.0, q=[0.0], h=[2.0], T=[[1.0]])
    prob = TwoStageProblem(FirstStage(c=[-1.0]), [[1.0]], [s])
    with pytest.raises(CompleteRecourseViolation):
        run("TR", prob, make_partition(1, 1, 1), x0=[3.0])


def test_default_start_satisfies_first_stage_rows():
    prob = random_instance(np.random.default_rng(1), n=3, m2=2, N=4, budget_row=True)
    x0 = default_start(prob)
    assert prob.first.A @ x0 == pytest.approx(prob.first.b)
    assert np.all(x0 >= 0)


# -- asynchronous runs --------------------------------------------------------

@pytest.mark.parametrize("method,cfg", [
    ("ALS", dict(sigma=0.5)), ("ATR", dict(K=3, sigma=0.5)), ("ATR", dict(K=4, sigma=1.0)),
])
def test_async_runs_reach_oracle_under_random_orders(method, cfg):
    for seed in (1, 4, 7):
        prob, part, orc = oracle_case(seed)
        for order in range(4):
            res = run(method, prob, part, SolverConfig(**cfg), ScriptedExecutor(order))
            assert res.converged
            assert abs(res.objective - orc.value) <= 1e-5 * (1 + abs(orc.value))


def test_each_cluster_result_applied_once():
    prob, part, _ = oracle_case(4)
    res = run("ATR", prob, part, SolverConfig(K=3, sigma=0.5), ScriptedExecutor(3))
    for rec in res.records.values():
        assert rec.t == len(rec.values) <= part.T
    applied = [e for e in res.trace if e["event"] == "result"]
    keys = [(e["point"], c) for e in applied for c in e["clusters"]]
    assert len(keys) == len(set(keys))
    assert res.stats.results_applied == len(applied)


def test_basket_never_exceeds_K():
    prob, part, _ = oracle_case(7)
    res = run("ATR", prob, part, SolverConfig(K=2, sigma=0.3), ScriptedExecutor(5))
    sizes = [len(e["basket"]) for e in res.trace if e["event"] == "master"]
    assert max(sizes) <= 1          # the basket seen before adding the new point


def test_trace_round_trip(tmp_path, toy, toy_part):
    res = run("ATR", toy, toy_part, SolverConfig(K=2))
    path = tmp_path / "t.jsonl"
    write_trace(res.trace, path)
    assert read_trace(path) == res.trace
    assert res.trace[-1]["event"] == "stop"
