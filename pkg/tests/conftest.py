import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the line is printed in the terminal summary."""

    def record(label, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'}  {label}  {detail}".rstrip()
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
