import pytest

_RESULTS = []


@pytest.fixture
def report():
    """Record one acceptance line: ``report(name, passed, detail)``."""

    def _report(name, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
        _RESULTS.append(line)
        print(line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in _RESULTS:
            terminalreporter.write_line(line)
