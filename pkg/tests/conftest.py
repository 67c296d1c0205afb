import pytest

# (criterion number, status, description) rows filled in by test_acceptance.py
ACCEPTANCE_RESULTS: list[tuple[int, str, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, text in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"criterion {number:>2}: {status:<4} {text}")


@pytest.fixture
def record():
    def _record(number: int, ok: bool | None, text: str):
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        ACCEPTANCE_RESULTS.append((number, status, text))
        print(f"criterion {number}: {status} {text}")
        return ok
    return _record
