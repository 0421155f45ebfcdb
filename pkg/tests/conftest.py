import numpy as np
import pytest


@pytest.fixture
def rs():
    return np.random.default_rng(1234)


_criteria: dict[str, list[str]] = {}


def pytest_runtest_logreport(report):
    """Collect pass/fail outcomes of tests marked ``acceptance(name)``."""
    name = getattr(report, "acceptance", None)
    if name is None:
        return
    if report.when == "call" or report.failed or report.skipped:
        _criteria.setdefault(name, []).append(report.outcome)


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        report.acceptance = marker.args[0]
    return report


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcomes in _criteria.items():
        if any(o == "failed" for o in outcomes):
            status = "FAIL"
        elif all(o == "passed" for o in outcomes):
            status = "PASS"
        else:
            status = "SKIP"
        terminalreporter.write_line(f"{status}  {name}")
