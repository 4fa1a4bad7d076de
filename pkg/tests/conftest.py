"""Collects acceptance outcomes and prints one line per criterion at the end."""
import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")
        entry = _RESULTS.setdefault(n, {"title": title, "status": [], "detail": []})
        entry["status"].append(status)
        if detail:
            entry["detail"].append(detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        e = _RESULTS[n]
        st = e["status"]
        # a criterion split over several tests passes only if none fails
        status = "FAIL" if "FAIL" in st else ("PASS" if "PASS" in st else "SKIP")
        title, detail = e["title"], "; ".join(e["detail"])
        line = f"criterion {n:>2} {title:<34} {status}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
