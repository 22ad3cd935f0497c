import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from symga.games import rock_paper_scissors
from symga.policy import build_quantized_set
from symga.solver import GridOracle

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def rps():
    return rock_paper_scissors()


@pytest.fixture(scope="session")
def grid10():
    return build_quantized_set(3, 1, 10)


@pytest.fixture(scope="session")
def rps_oracle(rps, grid10):
    return GridOracle(rps, grid10)


def row(*p):
    return np.array([p], dtype=float)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict = {}


def record(key: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[key] = f"{'PASS' if ok else 'FAIL'}  {key}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[1])):
            terminalreporter.write_line(ACCEPTANCE[key])
