"""Collects acceptance verdicts and prints one line per criterion after the run."""
import pytest

_VERDICTS: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    entry = _VERDICTS.setdefault(number, {"title": title, "ok": True, "notes": []})
    if report.failed or (report.when == "setup" and report.skipped):
        entry["ok"] = False
        entry["notes"].append(f"{item.name}: {report.when} {report.outcome}")
    if report.when == "call":
        entry["ran"] = True
        entry["notes"].extend(str(v) for k, v in report.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        v = _VERDICTS[number]
        status = "PASS" if v["ok"] and v.get("ran") else "FAIL"
        line = f"criterion {number:>2} {status}: {v['title']}"
        if v["notes"]:
            line += " | " + "; ".join(v["notes"])
        terminalreporter.write_line(line)
