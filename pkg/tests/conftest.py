import numpy as np
import pytest

from dmorph import FieldParametrization, TimeGrid, TransitionSpec, standard_system, synthesize_field


@pytest.fixture(scope="session")
def grid():
    return TimeGrid(10.0, 1000)


@pytest.fixture(scope="session")
def system():
    return standard_system("standard", 0)


@pytest.fixture(scope="session")
def trans():
    return TransitionSpec(1, 5)


def random_field(seed, grid):
    return synthesize_field(FieldParametrization.random(np.random.default_rng(seed)), grid)


def rabi_system():
    from dmorph import SystemSpec

    return SystemSpec(np.zeros(2), np.array([[0.0, 1.0], [1.0, 0.0]]), label="rabi")


_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    number, title = marker.args
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _criteria[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        status, title, detail = _criteria[number]
        line = f"[{status}] {number:2d}. {title}"
        terminalreporter.write_line(line + (f" -- {detail}" if detail else ""))
