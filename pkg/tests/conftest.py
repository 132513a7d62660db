import pytest

# label -> (title, status, reason)
_CRITERIA: dict[str, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label, title): acceptance criterion result line")
    config.addinivalue_line("markers", "slow: takes more than a few seconds")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        label, title = mark.args
        reason = ""
        if not rep.passed and call.excinfo is not None:
            msg = str(call.excinfo.value).strip().splitlines()
            reason = f"{call.excinfo.typename}: {msg[0] if msg else ''}"
        _CRITERIA[label] = (title, "PASS" if rep.passed else "FAIL", reason)


def _order(label: str):
    head, _, tail = label.partition(" ")
    return int(head.lstrip("C")), tail


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA, key=_order):
        title, status, reason = _CRITERIA[label]
        line = f"{status} {label}: {title}"
        if reason:
            line += f"  [{reason[:160]}]"
        terminalreporter.write_line(line)
