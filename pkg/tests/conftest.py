import pytest

from mpar.fixtures import worked_example


@pytest.fixture(scope="session")
def fx():
    return worked_example()


@pytest.fixture(scope="session")
def model(fx):
    return fx.model()


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[k])
