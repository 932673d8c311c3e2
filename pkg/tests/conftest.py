import pytest

from synthetic import shapes_dataset

from mxpool.graph_io import write_tu_dataset

_criteria = {}


@pytest.fixture
def shapes():
    return shapes_dataset()


@pytest.fixture
def tu_root(tmp_path, shapes):
    """TU-format copy of the synthetic dataset under ``<tmp>/SHAPES``."""
    write_tu_dataset(shapes, tmp_path / "SHAPES", "SHAPES")
    return tmp_path


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        measured = dict(report.user_properties).get("measured", "")
        if not measured and report.failed:
            measured = report.longrepr.reprcrash.message.splitlines()[0] if hasattr(report.longrepr, "reprcrash") else ""
        _criteria[name] = (report.outcome, measured)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, (outcome, measured) in sorted(_criteria.items()):
        line = f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}"
        terminalreporter.write_line(f"{line}  {measured}" if measured else line)
