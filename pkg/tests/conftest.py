import pytest
from hypothesis import settings

# first calls pay numba compile time
settings.register_profile("default", deadline=None)
settings.load_profile("default")

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; returns the pass flag so tests can assert on it."""

    def record(number, title, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]"
        print(line)
        _CRITERIA[number] = line
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
