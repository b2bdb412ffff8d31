import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Recorder for acceptance checks: prints one PASS/FAIL line per criterion
    in the terminal summary, and fails the test on a FAIL."""

    def record(criterion: str, passed: bool, detail: str = ""):
        status = "PASS" if passed else "FAIL"
        suffix = f" ({detail})" if detail else ""
        ACCEPTANCE_LINES.append(f"acceptance {criterion}: {status}{suffix}")
        assert passed, f"acceptance {criterion} failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
