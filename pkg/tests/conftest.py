import numpy as np
import pytest

from bacvar.config import load_domain
from bacvar.mdp import betting_game_domain


@pytest.fixture(scope="session")
def betting():
    return betting_game_domain()


@pytest.fixture(scope="session")
def navigation():
    return load_domain("navigation")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
