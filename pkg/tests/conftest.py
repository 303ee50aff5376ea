import numpy as np
import pytest

from spdql.mdp import two_state_mdp
from spdql.oracle import SaddleProblem, solve_optimal
from spdql.schedule import two_state_schedule


@pytest.fixture(scope="session")
def model():
    return two_state_mdp()


@pytest.fixture(scope="session")
def schedule(model):
    return two_state_schedule(model)


@pytest.fixture(scope="session")
def schedule_from_one(model):
    return two_state_schedule(model, first_step=1)


@pytest.fixture(scope="session")
def problem_small_eta(model, schedule_from_one):
    """The reference LP: eta = 0.1, M = M_inf, floor taken from step 1."""
    return SaddleProblem(model, 0.1, schedule_from_one.m_infinity, schedule_from_one.zeta)


@pytest.fixture(scope="session")
def solution_small_eta(problem_small_eta):
    return solve_optimal(problem_small_eta)


@pytest.fixture(scope="session")
def problem_run(model, schedule):
    """The problem the learners are run on: eta = 1.5."""
    return SaddleProblem(model, 1.5, schedule.m_infinity, schedule.zeta)


@pytest.fixture(scope="session")
def solution_run(problem_run):
    return solve_optimal(problem_run)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
