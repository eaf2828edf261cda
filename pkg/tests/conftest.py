import sys


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, 10):
        if number in module.RESULTS:
            ok, text = module.RESULTS[number]
            terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {text}")
        else:
            terminalreporter.write_line(f"criterion {number}: NOT RUN")
