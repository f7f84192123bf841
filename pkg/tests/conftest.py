from __future__ import annotations

import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+?)(\[|$)")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    status: dict[tuple[int, str], bool] = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            m = _CRITERION.search(getattr(rep, "nodeid", ""))
            if not m or rep.when not in ("setup", "call", "teardown"):
                continue
            crit = (int(m.group(1)), m.group(2))
            ok = key == "passed"
            status[crit] = status.get(crit, True) and ok
    if not status:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), ok in sorted(status.items()):
        terminalreporter.write_line(f"criterion {num:2d} {name.replace('_', ' ')}: {'PASS' if ok else 'FAIL'}")
