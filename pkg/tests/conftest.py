import pytest

_LINES = []


@pytest.fixture
def report(capsys):
    """Print a criterion verdict immediately and again in the terminal summary."""
    def emit(line):
        _LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES):
            terminalreporter.write_line(line)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long training runs (minutes each)")
