import pytest

from surggap import fixtures_dir

_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Record a pass/fail line for the acceptance summary, then assert."""

    def record(name: str, ok: bool, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


@pytest.fixture(scope="session")
def fixtures():
    return fixtures_dir()


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
