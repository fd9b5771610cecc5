import os
import re
import sys

sys.path.insert(0, os.path.dirname(__file__))

_CRITERIA = {}  # criterion number -> [passed, details]
_AC_NAME = re.compile(r"test_ac(\d+)_")


def pytest_runtest_logreport(report):
    m = _AC_NAME.search(report.nodeid)
    if not m:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        entry = _CRITERIA.setdefault(int(m.group(1)), [True, []])
        entry[0] = entry[0] and report.passed
        for key, val in report.user_properties:
            if key == "detail":
                entry[1].append(str(val))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        ok, details = _CRITERIA[num]
        line = f"AC{num:<2d} {'PASS' if ok else 'FAIL'}"
        if details:
            line += "  " + "; ".join(details)
        terminalreporter.write_line(line)
