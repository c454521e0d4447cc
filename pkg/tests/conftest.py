"""Repeats the acceptance gate's PASS/FAIL lines after the run.

pytest captures output at the file-descriptor level by default, so lines
printed during the tests only surface with -s.  The gate records each line
as it is produced; this hook replays them in the terminal summary where
they are always visible.
"""


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        from test_acceptance import REPORT_LINES
    except ImportError:
        return
    if not REPORT_LINES:
        return
    terminalreporter.section("acceptance gate")
    for line in REPORT_LINES:
        terminalreporter.write_line(line)
