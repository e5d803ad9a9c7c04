import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from criteria_log import CRITERIA  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(CRITERIA):
        terminalreporter.write_line(line)
