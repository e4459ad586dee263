"""Collects acceptance-criterion outcomes and prints one line per criterion."""
import pytest

_CRITERIA: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    entry = _CRITERIA.setdefault(marker.args[0], {"status": [], "detail": []})
    entry["status"].append("FAIL" if rep.failed else "SKIP" if rep.skipped else "PASS")
    entry["detail"] += [str(v) for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(_CRITERIA):
        statuses = _CRITERIA[k]["status"]
        status = "FAIL" if "FAIL" in statuses else "PASS" if "PASS" in statuses else "SKIP"
        detail = "; ".join(dict.fromkeys(_CRITERIA[k]["detail"]))
        terminalreporter.write_line(f"criterion {k}: {status}" + (f"  ({detail})" if detail else ""))
