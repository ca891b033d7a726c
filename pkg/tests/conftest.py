import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; shown again in the terminal summary."""
    lines = request.config.stash[_LINES]

    def report(name, ok, detail, expected_failure=False):
        status = "PASS" if ok else ("FAIL (expected, see ledger)" if expected_failure else "FAIL")
        line = f"[{status}] {name}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
