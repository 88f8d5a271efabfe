import pytest
from hypothesis import settings

settings.register_profile("repo", deadline=None)
settings.load_profile("repo")

_CRITERIA: list[str] = []
_NOTES: list[str] = []


@pytest.fixture
def report(capsys):
    """Print one PASS/FAIL line for an acceptance criterion, outside output capture."""

    def emit(criterion: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
        _CRITERIA.append(line)
        with capsys.disabled():
            print("\n" + line)

    return emit


@pytest.fixture
def note():
    """Attach free text (e.g. campaign tables) to the end-of-run summary."""
    return _NOTES.append


def pytest_terminal_summary(terminalreporter):
    for text in _NOTES:
        terminalreporter.section("campaign summary")
        terminalreporter.write(text)
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
