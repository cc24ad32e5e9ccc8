from pathlib import Path

import pytest

from sectorgame.airspace import Flight, Scenario, Segment

FIXTURES = Path(__file__).parent / "fixtures"


def make_tiny1() -> Scenario:
    """Two sectors of capacity 1; both flights sit in sector 0 during [0, 5)."""
    flights = tuple(Flight(k, 0, 0, (Segment(0, 0, 5),)) for k in range(2))
    return Scenario((1, 1), flights, horizon=15, bin_width=5, action_set=(0, 5))


@pytest.fixture
def tiny1() -> Scenario:
    return make_tiny1()


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Store one PASS/FAIL line; printed in the terminal summary and echoed to stdout."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
