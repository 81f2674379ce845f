import pytest

_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def record():
    """``record(n, checks, detail)`` stores one acceptance line and asserts every check."""

    def _record(n: int, checks: dict, detail: str = ""):
        failed = [k for k, ok in checks.items() if not ok]
        note = detail + (f" | failed: {', '.join(failed)}" if failed else "")
        _RESULTS[n] = (not failed, note)
        print(f"criterion {n}: {'PASS' if not failed else 'FAIL'} {note}")
        assert not failed, note

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        ok, note = _RESULTS[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {note}")
