"""Per-criterion pass/fail reporting for tests marked ``@pytest.mark.criterion(n, title)``."""

import pytest

_results: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion this test covers")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            num, title = mark.args
            _results.setdefault(num, {"title": title, "tests": {}})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    entry = _results[mark.args[0]]["tests"]
    # a test counts as passed only if setup, call and teardown all pass
    if rep.failed:
        entry[item.nodeid] = False
    elif rep.when == "call":
        entry.setdefault(item.nodeid, True)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_results):
        entry = _results[num]
        tests = entry["tests"]
        if not tests:
            status = "NOT RUN"
        else:
            status = "PASS" if all(tests.values()) else "FAIL"
        terminalreporter.write_line(f"criterion {num}: {status:7s} {entry['title']} ({len(tests)} tests)")
