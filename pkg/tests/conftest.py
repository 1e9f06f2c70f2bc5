import time

import pytest

CRITERIA = []
SESSION_START = time.monotonic()


@pytest.fixture
def verdict(capsys):
    """Print and record one ``C<n> PASS|FAIL <detail>`` line."""

    def emit(name, passed, detail=""):
        line = f"{name} {'PASS' if passed else 'FAIL'} {detail}".rstrip()
        CRITERIA.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
