import pytest

_RESULTS: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    num = marker.args[0]
    ok, notes = _RESULTS.get(num, (True, []))
    notes += [v for k, v in item.user_properties if k == "detail"]
    _RESULTS[num] = (ok and rep.passed, notes)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_RESULTS):
        ok, notes = _RESULTS[num]
        line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}"
        if notes:
            line += "  (" + "; ".join(notes) + ")"
        terminalreporter.write_line(line)
