import re

import pytest

_LINES: dict[int, str] = {}


@pytest.fixture
def criterion(capsys):
    """Record one acceptance line; returns the pass flag so tests can assert on it."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"CRITERION {number} {'PASS' if passed else 'FAIL'}: {title} | {detail}"
        _LINES[number] = line
        with capsys.disabled():
            print("\n" + line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    ran = {int(m.group(1)) for m in (re.match(r"CRITERION (\d+)", v) for v in _LINES.values())}
    for n in range(1, max(ran | {9}) + 1):
        terminalreporter.write_line(_LINES.get(n, f"CRITERION {n} FAIL: not reached (errored before reporting)"))
