import pytest

_LINES = []


@pytest.fixture
def record():
    """Register one summary line per acceptance criterion."""
    def add(tag, ok, detail):
        _LINES.append(f"{tag} {'PASS' if ok else 'FAIL'}  {detail}")
        print(_LINES[-1])
        return ok
    return add


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES):
            terminalreporter.write_line(line)
