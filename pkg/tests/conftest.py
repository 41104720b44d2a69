import pytest

# Acceptance verdicts and table listings, echoed in the terminal summary so
# they survive output capture.
ACCEPTANCE_LINES = []
TABLE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if TABLE_LINES:
        terminalreporter.section("variance ratio tables (one repetition)")
        for line in TABLE_LINES:
            terminalreporter.write_line(line)
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def _recorder(sink):
    def record(line):
        sink.append(line)
        print(line)
    return record


@pytest.fixture(scope="session")
def record_acceptance():
    return _recorder(ACCEPTANCE_LINES)


@pytest.fixture(scope="session")
def record_table():
    return _recorder(TABLE_LINES)
