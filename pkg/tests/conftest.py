import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    ran = {rep.nodeid.split("::")[-1] for key in ("passed", "failed", "error")
           for rep in terminalreporter.stats.get(key, []) if "test_acceptance" in rep.nodeid}
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 13):
        prefix = f"test_criterion_{n:02d}_"
        if not any(name.startswith(prefix) for name in ran):
            continue
        line = mod.RESULTS.get(n, f"criterion {n:2d}: FAIL  did not complete (see traceback)")
        terminalreporter.write_line(line)
