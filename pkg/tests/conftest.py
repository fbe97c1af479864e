import pytest

_REPORT = []


@pytest.fixture
def report():
    """Record one ``PASS``/``FAIL`` line per acceptance criterion."""

    def emit(criterion, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion:>2}: {detail}"
        _REPORT.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_REPORT, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
