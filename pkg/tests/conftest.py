import pytest

_LINES = []


@pytest.fixture(scope="session")
def criterion():
    """Record one verdict line per acceptance criterion for the terminal summary."""
    def record(label, ok, detail=""):
        _LINES.append(f"{'PASS' if ok else 'FAIL'}  criterion {label}: {detail}")
        print(_LINES[-1])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
