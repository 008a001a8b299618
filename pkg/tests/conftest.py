import pytest

# (criterion number, line) pairs collected by the acceptance suite
CRITERIA: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.fixture
def report(request):
    """report(n, passed, detail): record one acceptance line, then assert on it."""

    def _report(n: int, passed: bool, detail: str = ""):
        line = f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        CRITERIA[n] = line
        print(line)
        assert passed, line

    return _report


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and rep.when == "call" and rep.failed:
        n = marker.args[0]
        if n not in CRITERIA:
            CRITERIA[n] = f"criterion {n:>2}: FAIL  error: {call.excinfo.typename}: {call.excinfo.value}"


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
