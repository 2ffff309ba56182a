from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    _observations(terminalreporter)
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

OBSERVATIONS: list[str] = []


def _observations(terminalreporter):
    if OBSERVATIONS:
        terminalreporter.section("observations (reported, not asserted)")
        for line in OBSERVATIONS:
            terminalreporter.write_line(line)
