import pytest

from gridrisk.caseio import load_ieee118


@pytest.fixture(scope="session")
def ieee118_doc():
    return load_ieee118()


@pytest.fixture(scope="session")
def ieee118(ieee118_doc):
    return ieee118_doc.grid


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)
