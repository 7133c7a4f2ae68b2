import pytest

_RESULTS = {}


@pytest.fixture
def record():
    """Store one summary line per acceptance criterion, printed at the end of the run."""
    def _record(number, name, ok, detail=""):
        _RESULTS[number] = (name, bool(ok), detail)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_RESULTS):
        name, ok, detail = _RESULTS[k]
        terminalreporter.write_line(f"criterion {k:>2} {'PASS' if ok else 'FAIL'}  {name}  {detail}")
