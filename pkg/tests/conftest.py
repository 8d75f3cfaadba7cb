def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS, line
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        ok, detail, elapsed, name, limit = RESULTS[number]
        terminalreporter.write_line(line(number, name, ok, detail, elapsed, limit))
