import pytest

_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance():
    """Records one verdict line per acceptance criterion for the terminal summary."""
    def record(number, title, ok, detail=""):
        _ACCEPTANCE[number] = (title, bool(ok), detail)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[number]
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
