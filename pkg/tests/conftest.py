import pytest

VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict():
    """Record and print one pass/fail line for an acceptance criterion."""

    def record(number: int, ok: bool, detail: str, soft: bool = False):
        status = "PASS" if ok else ("WARN" if soft else "FAIL")
        line = f"criterion {number}: {status}  {detail}"
        VERDICTS.append(line)
        print(line)
        return ok

    return record
