from __future__ import annotations

import pytest

_criteria: dict[int, dict] = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when not in ("setup", "call"):
        return
    n, title = marker.args
    entry = _criteria.setdefault(n, {"title": title, "ok": True, "ran": False})
    if call.excinfo is not None:
        entry["ok"] = False
    if call.when == "call":
        entry["ran"] = True


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} {status}  {e['title']}")


@pytest.fixture(scope="session")
def ablation_results():
    from budgetvoi.harness import RunConfig, run_ablation

    from fixtures.regenerate import SUITE
    return run_ablation(RunConfig(**SUITE))
