"""Shared fixtures: a session-wide acceptance-criterion log.

Each acceptance test aggregates its sub-checks, then records a single
pass/fail verdict through the ``criteria`` fixture; the terminal summary
prints one line per criterion so a run's verdicts are readable at a glance.
"""

import pytest


class CriterionLog:
    def __init__(self):
        self.entries = {}

    def check(self, number: int, title: str, passed: bool, detail: str = "") -> None:
        """Record the verdict, then assert it (so pytest sees the failure too)."""
        self.entries[number] = (title, bool(passed), detail)
        assert passed, f"criterion {number} ({title}) failed: {detail}"


_LOG = CriterionLog()


@pytest.fixture(scope="session")
def criteria() -> CriterionLog:
    return _LOG


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _LOG.entries:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_LOG.entries):
        title, passed, detail = _LOG.entries[number]
        verdict = "PASS" if passed else "FAIL"
        line = f"criterion {number:2d} {verdict}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
