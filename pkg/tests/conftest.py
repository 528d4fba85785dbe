import pytest

from rte_halfspace.checks import Suite
from rte_halfspace.config import RunConfig

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def suite(tmp_path_factory):
    """Acceptance suites at the default configuration; runs are shared between criteria."""
    return Suite(RunConfig(), workdir=tmp_path_factory.mktemp("determinism"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
