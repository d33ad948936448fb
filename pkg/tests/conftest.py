import pytest

# Acceptance criteria append ``(criterion, passed, detail)`` here.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(ACCEPTANCE_LINES, key=lambda row: row[0]):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")


@pytest.fixture(scope="session")
def acceptance_report():
    def report(criterion: int, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append((criterion, bool(passed), detail))
    return report
