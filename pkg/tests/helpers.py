"""Random problem generators shared by the test modules."""

import numpy as np

from spdql.mdp import random_mdp
from spdql.oracle import PrimalDualPoint, SaddleProblem
from spdql.schedule import random_ergodic_schedule
from spdql.spdq import project_lambda_matrix


def random_problem(rng, n_states, n_actions, eta_scale=1.0):
    """Random model with a random positive state-action measure."""
    m = random_mdp(n_states, n_actions, rng, discount=float(rng.uniform(0.1, 0.95)), sigma=float(rng.uniform(1, 3)))
    meas = rng.dirichlet(np.ones(n_states * n_actions)).reshape(n_states, n_actions) + 0.01
    meas /= meas.sum()
    eta = eta_scale * rng.uniform(0.05, 1.0, n_states)
    return SaddleProblem(m, eta, meas, float(meas.min()))


def random_scheduled_problem(rng, n_states, n_actions):
    """Random model, random ergodic behaviour schedule, and the problem at its limit measure."""
    m = random_mdp(n_states, n_actions, rng, discount=0.85, sigma=2.0)
    sched = random_ergodic_schedule(m, rng)
    return m, sched, SaddleProblem(m, rng.uniform(0.1, 1, n_states), sched.m_infinity, sched.zeta)


def random_feasible_point(rng, problem):
    s, a = problem.model.n_states, problem.model.n_actions
    one_minus = 1 - problem.model.discount
    v_cap = problem.model.sigma / one_minus
    lam_cap = problem.eta_l1 / one_minus
    lam = project_lambda_matrix(rng.uniform(0, lam_cap, (s, a)), problem.eta, lam_cap)
    return PrimalDualPoint(rng.uniform(0, v_cap, (s, a)), rng.uniform(0, v_cap, s), lam,
                           rng.uniform(0, problem.eta_l1 / (problem.zeta * one_minus), (s, a)))
