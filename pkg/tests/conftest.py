import socket
from pathlib import Path

import pytest

from memrl.synthetic import load_corpus

FIXTURES = Path(__file__).resolve().parent / "fixtures"

# lines recorded by the acceptance tests, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def _no_network(*args, **kwargs):
    raise RuntimeError("network access attempted during tests")


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    """Every test runs with sockets disabled; only the mocked gateway transport may 'send'."""
    monkeypatch.setattr(socket.socket, "connect", _no_network)
    monkeypatch.setattr(socket.socket, "connect_ex", _no_network)
    monkeypatch.setattr(socket, "create_connection", _no_network)


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def eval_corpus():
    return load_corpus(FIXTURES / "synthetic_eval.json")


@pytest.fixture(scope="session")
def train_corpus():
    return load_corpus(FIXTURES / "synthetic_train.json")


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
