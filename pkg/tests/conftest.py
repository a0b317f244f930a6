"""Shared pytest plumbing: show acceptance verdict lines in the run summary.

Output capture swallows per-test prints unless the test fails; the terminal
summary hook runs outside capture, so every "[criterion N] PASS/FAIL" line
recorded by the acceptance suite is echoed once at the end of the run.
"""

VERDICT_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not VERDICT_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in dict.fromkeys(VERDICT_LINES):
        terminalreporter.write_line(line)
