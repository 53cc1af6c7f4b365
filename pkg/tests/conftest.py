from pathlib import Path

import pytest

# criterion number -> list of (check, passed, detail), filled by tests/test_acceptance.py
_ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}


@pytest.fixture
def repo_root():
    return Path(__file__).resolve().parent.parent


@pytest.fixture
def record_criterion():
    def record(number: int, check: str, passed: bool, detail: str = "") -> None:
        _ACCEPTANCE.setdefault(number, []).append((check, bool(passed), detail))
        print(f"criterion {number} [{check}]: {'PASS' if passed else 'FAIL'} {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        checks = _ACCEPTANCE[number]
        ok = all(passed for _, passed, _ in checks)
        failed = [name for name, passed, _ in checks if not passed]
        tail = f" (failed: {', '.join(failed)})" if failed else ""
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} {len(checks)} check(s){tail}")
        for name, passed, detail in checks:
            terminalreporter.write_line(f"    {'PASS' if passed else 'FAIL'} {name}: {detail}")
