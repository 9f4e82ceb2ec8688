import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from spdecomp.problem import (
    FirstStage,
    RandomEntry,
    SampledSpec,
    ScenarioData,
    TwoStageProblem,
    ValidationError,
    build_deterministic_equivalent,
    draw_outcomes,
    evaluate_Q,
    make_partition,
    random_instance,
    sample_instance,
    solve_deterministic_equivalent,
    toy_nv,
)

from conftest import oracle_case


def test_toy_evaluation_at_zero(toy):
    ev = evaluate_Q(toy, [0.0])
    assert ev.value == pytest.approx(4.4, abs=1e-8)
    assert ev.subgradient == pytest.approx([-1.0], abs=1e-8)
    assert ev.scenario_values == pytest.approx([2.0, 6.0])


def test_toy_recourse_function_by_hand(toy):
    # Q(x) = x + 0.4*2*max(1-x,0) + 0.6*2*max(3-x,0)
    for x in np.linspace(0, 5, 21):
        expect = x + 0.8 * max(1 - x, 0) + 1.2 * max(3 - x, 0)
        assert evaluate_Q(toy, [x]).value == pytest.approx(expect, abs=1e-9)


def test_toy_oracle(toy):
    orc = solve_deterministic_equivalent(toy)
    assert orc.value == pytest.approx(3.0, abs=1e-9)
    assert orc.x == pytest.approx([3.0])


@pytest.mark.parametrize("seed", range(8))
def test_oracle_matches_highs(seed):
    prob, _, orc = oracle_case(seed)
    de = build_deterministic_equivalent(prob)
    ref = linprog(de.c, A_eq=de.A, b_eq=de.b, bounds=[(0, None)] * de.c.size, method="highs")
    assert ref.status == 0
    assert orc.value == pytest.approx(ref.fun, abs=1e-7 * (1 + abs(ref.fun)))


@pytest.mark.parametrize("seed", range(6))
def test_oracle_value_equals_evaluation_at_oracle_point(seed):
    prob, _, orc = oracle_case(seed)
    assert evaluate_Q(prob, orc.x).value == pytest.approx(orc.value, abs=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_subgradient_inequality(seed, probe_seed):
    prob = random_instance(np.random.default_rng(seed), n=3, m2=2, N=5)
    rng = np.random.default_rng(probe_seed)
    x, y = rng.uniform(0, 4, size=(2, prob.n))
    ev = evaluate_Q(prob, x)
    assert evaluate_Q(prob, y).value >= ev.value + ev.subgradient @ (y - x) - 1e-8


def test_validation_errors():
    first = FirstStage(c=[1.0])
    W = [[1.0, -1.0]]
    s = lambda p: ScenarioData(p=p, q=[2, 0], h=[1], T=[[1]])
    with pytest.raises(ValidationError):
        TwoStageProblem(first, W, [s(0.5), s(0.4)])
    with pytest.raises(ValidationError):
        TwoStageProblem(first, W, [s(1.0), s(0.0)])
    with pytest.raises(ValidationError):
        TwoStageProblem(first, W, [ScenarioData(p=1.0, q=[2], h=[1], T=[[1]])])
    with pytest.raises(ValidationError):
        TwoStageProblem(first, W, [])
    with pytest.raises(ValidationError):
        FirstStage(c=[1.0, 2.0], A=[[1.0]], b=[1.0])


def test_inputs_are_copied():
    c = np.array([1.0])
    first = FirstStage(c=c)
    c[0] = 99
    assert first.c[0] == 1.0
    c.setflags(write=True)


def test_json_round_trip(tmp_path):
    prob = random_instance(np.random.default_rng(3), n=2, m2=2, N=4)
    path = tmp_path / "p.json"
    prob.save(path)
    back = TwoStageProblem.load(path)
    assert back.equals(prob, 0.0)
    assert json.loads(path.read_text()) == json.loads(back.dumps())


def test_partition_shapes():
    part = make_partition(10, 4, 3)
    assert part.T == 4 and part.C == 3 and part.N == 10
    flat = [i for c in part.clusters for i in c]
    assert flat == list(range(10))
    assert sorted(j for ch in part.chunks for j in ch) == list(range(4))
    assert [len(c) for c in part.clusters] == [3, 3, 2, 2]
    with pytest.raises(ValidationError):
        make_partition(3, 4, 1)
    with pytest.raises(ValidationError):
        make_partition(4, 2, 3)


def test_sampling_is_deterministic_and_calibrated():
    base = toy_nv()
    entry = RandomEntry("h", (0,), (1.0, 3.0), (0.4, 0.6))
    spec = SampledSpec(base=base, entries=[entry], N=10_000, seed=5)
    a, b = sample_instance(spec), sample_instance(spec)
    assert a.equals(b, 0.0)
    freq = np.mean([s.h[0] == 1.0 for s in a.scenarios])
    assert abs(freq - 0.4) <= 0.02
    assert sum(s.p for s in a.scenarios) == pytest.approx(1.0, abs=1e-12)


def test_draw_outcomes_independent_columns():
    e1 = RandomEntry("h", (0,), (0.0, 1.0), (0.5, 0.5))
    e2 = RandomEntry("q", (0,), (0.0, 1.0, 2.0), (0.2, 0.3, 0.5))
    d = draw_outcomes([e1, e2], 20_000, 1)
    assert d.shape == (20_000, 2)
    joint = np.mean((d[:, 0] == 1) & (d[:, 1] == 2))
    assert joint == pytest.approx(0.25, abs=0.02)


def test_random_entry_validation():
    with pytest.raises(ValidationError):
        RandomEntry("h", (0,), (1.0, 2.0), (0.5, 0.4))
    with pytest.raises(ValidationError):
        RandomEntry("W", (0, 0), (1.0,), (1.0,))
    with pytest.raises(ValidationError):
        SampledSpec(base=toy_nv(), entries=[RandomEntry("h", (3,), (1.0,), (1.0,))], N=2, seed=0)
