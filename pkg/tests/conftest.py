import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    def report(criterion: int, passed: bool, detail: str):
        line = f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
