import warnings

import pytest

with warnings.catch_warnings():
    warnings.filterwarnings("ignore", message="Using `httpx` with `starlette.testclient`")
    from fastapi.testclient import TestClient

from probeanon.pepper_service import EntropySource, PepperService

TOKEN = "test-token"
AUTH = {"Authorization": f"Bearer {TOKEN}"}
F0 = 28_333_333


class FakeClock:
    def __init__(self, seconds: float):
        self.now = seconds

    def __call__(self) -> float:
        return self.now


@pytest.fixture
def clock():
    return FakeClock(F0 * 60)


@pytest.fixture
def service():
    return PepperService(EntropySource.seeded(1234))


@pytest.fixture
def client_for():
    clients = []

    def make(app):
        c = TestClient(app)
        clients.append(c)
        return c

    yield make
    for c in clients:
        c.close()


# Filled by tests/test_acceptance.py; printed once at the end of the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
