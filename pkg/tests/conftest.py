"""Shared pytest plumbing.

The acceptance tests append one line per criterion here; the terminal
summary hook replays them after the run, so the suite output carries an
explicit pass/fail line for every criterion even when stdout is captured.
"""

ACCEPTANCE_REPORT = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_REPORT:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_REPORT:
            terminalreporter.write_line(line)
