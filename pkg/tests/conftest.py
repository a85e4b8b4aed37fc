from __future__ import annotations

import sys
from pathlib import Path

# make the acceptance helpers importable as a plain module
sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        passed, name, detail = RESULTS[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} [{number:2d}] {name}: {detail}")
