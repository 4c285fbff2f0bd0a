import pytest

_CRITERIA: list = []


@pytest.fixture
def report_criterion():
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number, ok, detail: str):
        """``ok=None`` records a skipped criterion."""
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        line = f"{status} criterion {number}: {detail}"
        print(line)
        _CRITERIA.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
