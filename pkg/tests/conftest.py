import pytest

_ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one acceptance line, then assert it."""

    def record(criterion, ok, detail):
        line = f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":").rstrip("abcd"))):
            terminalreporter.write_line(line)
