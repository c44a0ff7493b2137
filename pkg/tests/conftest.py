"""Shared pytest hooks: the acceptance gate summary."""

GATE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not GATE_LINES:
        return
    terminalreporter.section("acceptance gate")
    for line in sorted(GATE_LINES, key=lambda s: int(s.split()[1][1:])):
        terminalreporter.write_line(line)
