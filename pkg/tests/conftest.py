"""Shared pytest hooks: acceptance verdict lines are collected here and printed at the end."""
import re

ACCEPTANCE: list[str] = []


def _order(line: str):
    m = re.match(r"criterion (\d+)(\w*)", line)
    return (int(m.group(1)), m.group(2)) if m else (99, line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE, key=_order):
        terminalreporter.write_line(line)
