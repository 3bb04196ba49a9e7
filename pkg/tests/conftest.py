import numpy as np
import pytest

from gradpush import costs, digraph, engine, mixing


@pytest.fixture(scope="session")
def default_instance():
    """n=10, d=5, m=3, p=0.7 least-squares instance with fixed seeds."""
    g, _ = digraph.sample_strongly_connected(10, 0.7, 0)
    mix = mixing.build_mixing(g)
    ens = costs.least_squares_ensemble(10, 5, 3, seed=1)
    return g, mix, ens, engine.empirical_delta(mix)


def identity_quadratic(n: int, d: int, lin=None):
    """f_j(x) = 1/2 ||x||^2 + lin_j^T x."""
    lin = np.zeros((n, d)) if lin is None else np.asarray(lin, dtype=float)
    return costs.quadratic_from_data(np.zeros((n, d, d)), lin)


# -- acceptance summary: one PASS/FAIL line per criterion --------------------------

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion this test decides")


def pytest_runtest_logreport(report):
    marker = getattr(report, "_criterion", None)
    if marker is None:
        return
    num, title = marker
    entry = _criteria.setdefault(num, {"title": title, "ok": True, "seen": False})
    if report.when == "call" or report.outcome != "passed":
        entry["seen"] = True
        entry["ok"] &= report.outcome == "passed"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("criterion")
    if m is not None:
        outcome.get_result()._criterion = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        e = _criteria[num]
        if not e["seen"]:
            continue
        terminalreporter.write_line(f"criterion {num}: {'PASS' if e['ok'] else 'FAIL'}  {e['title']}")
