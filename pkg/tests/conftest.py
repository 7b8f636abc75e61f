import pytest

# acceptance criterion number -> (passed, detail)
_ACCEPTANCE: dict[int, tuple[bool, str]] = {}
N_CRITERIA = 11


@pytest.fixture
def record():
    """Register the outcome of one acceptance criterion, then assert it."""

    def _record(n: int, ok: bool, detail: str = "") -> None:
        _ACCEPTANCE[n] = (bool(ok), detail)
        assert ok, f"criterion {n} failed: {detail}"

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    touched = any("test_acceptance" in str(getattr(r, "nodeid", ""))
                  for key in ("passed", "failed", "error")
                  for r in terminalreporter.stats.get(key, []))
    if not touched:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        ok, detail = _ACCEPTANCE.get(n, (False, "not run or errored"))
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
