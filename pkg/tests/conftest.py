"""Shared pytest hooks.

The acceptance tests record one pass/fail line per criterion in
ACCEPTANCE_LINES; printing from inside a test is swallowed by pytest's
capture, so the lines are echoed here in the terminal summary instead.
"""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
