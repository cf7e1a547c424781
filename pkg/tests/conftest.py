"""Collects acceptance outcomes and prints one line per criterion at the end of the run."""

import pytest

# label -> list of (nodeid, outcome)
_OUTCOMES: dict[str, list] = {}
_ORDER: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion the test belongs to")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark and mark.args[0] not in _ORDER:
            _ORDER.append(mark.args[0])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _OUTCOMES.setdefault(mark.args[0], []).append((item.nodeid, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number, label in enumerate(_ORDER, start=1):
        results = [o for _, o in _OUTCOMES.get(label, [])]
        if not results:
            status = "NOT RUN"
        elif any(o == "failed" for o in results):
            status = "FAIL"
        elif all(o == "skipped" for o in results):
            status = "SKIP"
        else:
            status = "PASS"
        passed = sum(o == "passed" for o in results)
        terminalreporter.write_line(f"{number:>2}. {status:<7} {label} ({passed}/{len(results)} checks passed)")
