def pytest_terminal_summary(terminalreporter):
    try:
        from acceptance_log import LINES
    except ImportError:
        return
    if LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(LINES):
            terminalreporter.write_line(LINES[k])
