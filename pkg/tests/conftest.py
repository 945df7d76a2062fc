import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# acceptance lines, keyed by criterion number, printed after the run
ACCEPTANCE = {}


def record(number, passed, detail):
    status = passed if isinstance(passed, str) else ("PASS" if passed else "FAIL")
    ACCEPTANCE[number] = f"criterion {number}: {status}  {detail}"
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
