import sys

N_CRITERIA = 12


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    results = getattr(mod, "RESULTS", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        terminalreporter.write_line(results.get(n, f"A{n:<2} FAIL  not run or raised before reporting"))
