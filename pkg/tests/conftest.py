import pytest

_RESULTS: dict[int, list] = {}
_TITLES: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    _TITLES[n] = title
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        if hasattr(rep, "wasxfail"):
            status = "FAIL (known, expected failure)"
        else:
            status = "PASS" if rep.passed else "FAIL"
        _RESULTS.setdefault(n, []).append((item.name, status))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_RESULTS):
        parts = _RESULTS[n]
        worst = next((s for _, s in parts if s.startswith("FAIL")), "PASS")
        tr.write_line(f"criterion {n:>2} {worst:<32} {_TITLES[n]}")
        if len(parts) > 1:
            for name, status in parts:
                tr.write_line(f"    {status:<32} {name}")
