def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (passed, detail) in mod.RESULTS.items():
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
