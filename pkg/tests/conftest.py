import suite


def pytest_terminal_summary(terminalreporter):
    if suite.ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(suite.ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
