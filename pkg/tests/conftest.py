import pytest

ACCEPTANCE_LINES = {}


def _line(number, title, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    return f"criterion {number:>2} {status}  {title}" + (f"  ({detail})" if detail else "")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion test")


@pytest.fixture
def criterion(request):
    """Record the pass/fail line for this test's criterion; printed in the terminal summary."""
    marker = request.node.get_closest_marker("criterion")
    number, title = marker.args

    def record(passed: bool, detail: str = "") -> bool:
        ACCEPTANCE_LINES[number] = _line(number, title, passed, detail)
        return passed

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    if report.failed and number in ACCEPTANCE_LINES and " PASS " in ACCEPTANCE_LINES[number]:
        ACCEPTANCE_LINES[number] = _line(number, title, False, "assertion after record")
    elif report.failed and number not in ACCEPTANCE_LINES:
        ACCEPTANCE_LINES[number] = _line(number, title, False, f"error: {call.excinfo.typename}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
