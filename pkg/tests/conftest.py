"""Shared pytest wiring: surfaces acceptance verdicts in the run summary.

Acceptance tests register their PASS/FAIL lines here; the terminal summary
hook replays them after the run, where output capture is suspended, so the
verdicts appear even when every test passes.
"""

acceptance_lines = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.line(line)
