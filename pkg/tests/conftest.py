"""Collects acceptance outcomes and prints one line per criterion at the end."""

import pytest

_results: dict[int, tuple[str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    number, title = mark.args
    state = "PASS" if report.passed else "FAIL"
    if number not in _results or state == "FAIL":
        _results[number] = (state, title, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        state, title, secs = _results[number]
        terminalreporter.write_line(f"criterion {number:>2}: {state}  {title}  ({secs:.2f} s)")
