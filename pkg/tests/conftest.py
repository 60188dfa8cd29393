import pytest


@pytest.fixture
def write(tmp_path):
    """Write text to a file under tmp_path and return its path."""
    def _write(name, text):
        path = tmp_path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        return path
    return _write


_acceptance = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or report.failed:
        prev = _acceptance.get(props["criterion"])
        if prev is None or prev[0] == "PASS":
            _acceptance[props["criterion"]] = ("PASS" if report.passed else "FAIL",
                                               report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, secs) in sorted(_acceptance.items(), key=lambda kv: int(kv[0].split()[0])):
        terminalreporter.write_line(f"{status}  {name}  ({secs:.1f} s)")
