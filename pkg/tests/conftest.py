import pytest

_CRITERIA = {}


@pytest.fixture(scope="session")
def criteria():
    """Acceptance results by number: (passed, detail)."""
    return _CRITERIA


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in range(1, 11):
        if n in _CRITERIA:
            ok, detail = _CRITERIA[n]
            tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            tr.write_line(f"criterion {n:2d}: FAIL  no verdict (not run in this session, or errored before one)")
