import pytest

CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion."""

    def record(key, ok, detail):
        line = f"CRITERION {key}: {'PASS' if ok else 'FAIL'} ({detail})"
        CRITERIA[key] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for key in sorted(CRITERIA, key=lambda k: (int(k.split()[0].rstrip("abc")), k)):
            terminalreporter.write_line(CRITERIA[key])
