import numpy as np
import pytest

from driftmark.harness import ExperimentConfig, Setup
from driftmark.schedule import build_schedule
from driftmark.score_oracle import ScoreOracle, default_oracle, standard_normal_oracle

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def sched50():
    return build_schedule("linear", 50)


@pytest.fixture(scope="session")
def sched1000():
    return build_schedule("linear", 1000, 1e-4, 0.02)


@pytest.fixture(scope="session")
def mixture():
    return default_oracle()


@pytest.fixture(scope="session")
def small_mixture():
    rng = np.random.default_rng(7)
    return ScoreOracle([0.2, 0.5, 0.3], rng.standard_normal((3, 5)) * 2.0, [0.5, 1.0, 2.0])


@pytest.fixture(scope="session")
def std_normal():
    return standard_normal_oracle(6)


@pytest.fixture(scope="session")
def default_setup():
    return Setup.from_config(ExperimentConfig())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
