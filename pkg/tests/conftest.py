import pytest

_verdicts: dict[str, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    label = marker.args[0]
    detail = dict(item.user_properties).get("detail", "")
    if report.when == "call" or (report.when == "setup" and report.failed):
        verdict = "PASS" if report.passed else "FAIL"
        if report.failed and not detail:
            detail = str(report.longrepr.reprcrash.message) if hasattr(report.longrepr, "reprcrash") \
                else "error"
        _verdicts[label] = (verdict, detail)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_verdicts):
        verdict, detail = _verdicts[label]
        terminalreporter.write_line(f"{verdict} criterion {label}: {detail}")
