import pytest

from scaar.pipeline import TrainCache

_acceptance: dict[int, str] = {}


@pytest.fixture(scope="session")
def train_cache():
    """Training memo shared by the reference runs; identical inputs train once."""
    return TrainCache()


@pytest.fixture
def record():
    def _record(n: int, ok: bool, detail: str):
        _acceptance[n] = f"AC{n:<2} {'PASS' if ok else 'FAIL'}  {detail}"
        print(_acceptance[n])
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        terminalreporter.write_line(_acceptance[n])
