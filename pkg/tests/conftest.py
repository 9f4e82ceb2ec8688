import numpy as np
import pytest

from spdecomp.problem import make_partition, random_instance, solve_deterministic_equivalent, toy_nv


def oracle_case(seed: int):
    """Seeded random instance with n <= 4, m2 <= 3, N <= 16, its partition and oracle value."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    m2 = int(rng.integers(1, 4))
    N = int(rng.integers(2, 17))
    prob = random_instance(rng, n=n, m2=m2, N=N, budget_row=bool(seed % 2))
    T = int(rng.integers(1, N + 1))
    C = int(rng.integers(1, T + 1))
    orc = solve_deterministic_equivalent(prob)
    return prob, make_partition(N, T, C), orc


ORACLE_SEEDS = list(range(12))


@pytest.fixture
def toy():
    return toy_nv()


@pytest.fixture
def toy_part():
    return make_partition(2, 2, 2)


# -- acceptance reporting --------------------------------------------------------
# Tests marked @pytest.mark.criterion(n, title) roll up into one PASS/FAIL line per
# criterion in the terminal summary.

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion this test checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": 0, "failed": []})
    if rep.failed or rep.skipped:
        entry["failed"].append(item.name)
    elif rep.when == "call":
        entry["passed"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "FAIL" if e["failed"] or not e["passed"] else "PASS"
        extra = f"  (failing: {', '.join(e['failed'])})" if e["failed"] else ""
        terminalreporter.write_line(f"AC{number:>2} {status}  {e['title']}{extra}")
