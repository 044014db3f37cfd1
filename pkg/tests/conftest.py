import numpy as np
import pytest

from evtrigger import _backend


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


BACKENDS = ["python"] + (["compiled"] if _backend.compiled is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    """Run the test once per available kernel backend."""
    previous = _backend.name
    _backend.use(request.param)
    yield request.param
    _backend.use(previous)


# --- acceptance reporting -------------------------------------------------
# Tests marked ``criterion(n, title)`` get one PASS/FAIL line each in the
# terminal summary, in criterion order, whatever order they ran in.

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and report.passed:
        return
    number, title = mark.args
    if report.when == "call" or report.failed:
        verdict = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
        _criteria[number] = (verdict, title, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        verdict, title, seconds = _criteria[number]
        terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {title}  ({seconds:.1f} s)")
