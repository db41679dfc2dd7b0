from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import _instances  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if _instances.ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_instances.ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
