"""Collects one PASS/FAIL line per acceptance criterion and prints them at
the end of the session."""
import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")
_lines: dict[int, str] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    number = int(m.group(1))
    detail = dict(report.user_properties).get("detail", "")
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        if report.skipped:
            status = "SKIP"
            if isinstance(report.longrepr, tuple):
                detail = detail or report.longrepr[2]
        else:
            status = "PASS" if report.passed else "FAIL"
        _lines[number] = f"criterion {number:2d}: {status}  {detail}".rstrip()


def pytest_terminal_summary(terminalreporter):
    if not _lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_lines):
        terminalreporter.write_line(_lines[number])
