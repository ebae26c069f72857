from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion the test belongs to")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, dict(title=title, ok=True, failed=[], details=[]))
    if call.excinfo is not None and call.when in ("setup", "call"):
        entry["ok"] = False
        entry["failed"].append(item.name)
    if call.when == "call":
        entry["details"].extend(v for k, v in item.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "PASS" if e["ok"] else "FAIL"
        line = f"criterion {n} {status}: {e['title']}"
        if e["details"]:
            line += " | " + "; ".join(e["details"])
        if e["failed"]:
            line += " | failed: " + ", ".join(e["failed"])
        terminalreporter.write_line(line)
