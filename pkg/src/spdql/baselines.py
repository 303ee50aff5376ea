"""Comparison learners sharing the sampling interface of :func:`spdql.spdq.run`.

* tabular Q-learning on the behaviour stream,
* primal-dual on the plain LP Lagrangian ``L(V, lam)`` with the dual
  average re-weighted by the empirical state-action measure,
* the exact projected primal-dual iteration on ``L_{M_k}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .oracle import PrimalDualPoint, SaddleProblem
from .sampling import UniformPairs, make_env_sampler, run_generators
from .spdq import (
    FeasibleSets,
    RunConfig,
    RunningAverages,
    analytic_gradients,
    checkpoint_steps,
    initial_state,
    project_lambda_matrix,
)
from .trace import RunTrace


@dataclass
class Estimates:
    """What a learner exposes to the metric code at a checkpoint."""

    q: np.ndarray | None = None
    v: np.ndarray | None = None
    lam: np.ndarray | None = None
    mu_weighted: np.ndarray | None = None


def averages_view(avg: RunningAverages) -> Estimates:
    return Estimates(avg.q_bar, avg.v_bar, avg.lam_bar, avg.mu_bar_weighted)


@dataclass
class QLearningState:
    q: np.ndarray
    visit_counts: np.ndarray


class EmpiricalMeasure:
    def __init__(self, n_states: int, n_actions: int):
        self.counts = np.zeros((n_states, n_actions), dtype=np.int64)
        self.total = 0

    def add(self, s: int, a: int):
        self.counts[s, a] += 1
        self.total += 1

    def estimate(self, floor: bool = True) -> np.ndarray:
        """``counts / total``; unseen pairs get ``1 / total`` when ``floor`` is set."""
        if self.total == 0:
            raise InvalidArgument("empirical measure has no samples")
        counts = self.counts.astype(float)
        if floor:
            counts = np.maximum(counts, 1.0)
        return counts / self.total


def _trace(name: str, config: RunConfig, T: int) -> RunTrace:
    return RunTrace(metadata={"algorithm": name, "seed": config.seed, "gamma0": config.gamma0, "T": T})


def q_learning_run(model, schedule, config: RunConfig, stream=None, checkpoint_fn=None):
    """Watkins Q-learning on behaviour samples with ``gamma_k = gamma0 / sqrt(k + 1 + offset)``.

    ``Q`` starts uniform in ``[0, sigma / (1 - alpha)]`` and stays clamped
    there. Returns ``(state, trace)``.
    """
    n_states, n_actions = model.n_states, model.n_actions
    alpha = model.discount
    cap = model.sigma / (1 - alpha)
    T = int(config.T)
    gens = run_generators(config.seed, config.run_index)
    q = gens["init"].uniform(0.0, cap, (n_states, n_actions))
    state = QLearningState(q, np.zeros((n_states, n_actions), dtype=np.int64))
    env = make_env_sampler(config.sampling, model, schedule, gens["env"], stream=stream)
    trace = _trace("qlearning", config, T)
    checkpoints = set(checkpoint_steps(T, config.checkpoints_per_decade))
    for k in range(T):
        if k + 1 in checkpoints and checkpoint_fn is not None:
            for name, value in checkpoint_fn(k + 1, Estimates(q=q), state).items():
                trace.add(k + 1, name, value)
        s, a, s_next, r = env.next(k)
        gamma = config.gamma0 / math.sqrt(k + 1 + config.step_offset)
        target = r + alpha * q[s_next].max()
        x = (1.0 - gamma) * q[s, a] + gamma * target
        q[s, a] = 0.0 if x < 0.0 else (cap if x > cap else x)
        state.visit_counts[s, a] += 1
    return state, trace


def spd_rl_corrected_run(model, schedule, config: RunConfig, stream=None, checkpoint_fn=None,
                         exact_measure=None):
    """Stochastic primal-dual on ``L(V, lam) = eta'V + lam'(alpha P V + R - (1 (x) I) V)``.

    Behaviour sampling weights the dual gradient by the unknown measure, so
    the raw dual average approaches ``M^-1 lam*``. The reported dual is that
    average multiplied by the empirical measure (or by ``exact_measure``
    when given). Returns ``(estimates, measure, trace)``.
    """
    n_states, n_actions = model.n_states, model.n_actions
    alpha = model.discount
    T = int(config.T)
    gens = run_generators(config.seed, config.run_index)
    eta = config.eta_vector(n_states, model.sigma)
    zeta = config.resolve_zeta(schedule)
    v_cap = model.sigma / (1 - alpha)
    lam_cap = float(np.sum(eta)) / (zeta * (1 - alpha))
    v = gens["init"].uniform(0.0, v_cap, n_states)
    lam = gens["init"].uniform(0.0, lam_cap, (n_states, n_actions))
    env = make_env_sampler(config.sampling, model, schedule, gens["env"], stream=stream)
    uni = UniformPairs(n_states, n_actions, gens["uniform"])
    measure = EmpiricalMeasure(n_states, n_actions)
    v_sum = np.zeros(n_states)
    lam_sum = np.zeros((n_states, n_actions))
    trace = _trace("spdrl_corrected", config, T)
    checkpoints = set(checkpoint_steps(T, config.checkpoints_per_decade))

    def corrected(count):
        raw = lam_sum / count
        weights = exact_measure if exact_measure is not None else measure.estimate()
        return Estimates(v=v_sum / count, lam=weights * raw)

    for k in range(T):
        v_sum += v
        lam_sum += lam
        count = k + 1
        if count in checkpoints and checkpoint_fn is not None and measure.total > 0:
            for name, value in checkpoint_fn(count, corrected(count), None).items():
                trace.add(count, name, value)
        s, a, s_next, r = env.next(k)
        measure.add(s, a)
        sh, _ = uni.next()
        gamma = config.gamma0 / math.sqrt(k + 1 + config.step_offset)
        lam_sa = lam[s, a]
        v_s, v_next = v[s], v[s_next]
        x = lam_sa + gamma * (alpha * v_next + r - v_s)
        v[sh] -= gamma * n_states * eta[sh]
        v[s] += gamma * lam_sa
        v[s_next] -= gamma * alpha * lam_sa
        for ss in (sh, s, s_next):
            v[ss] = min(max(v[ss], 0.0), v_cap)
        lam[s, a] = min(max(x, 0.0), lam_cap)
    return corrected(T), measure, trace


def deterministic_pd_step(point: PrimalDualPoint, problem: SaddleProblem, m_k, gamma_k: float,
                          sets: FeasibleSets) -> PrimalDualPoint:
    """One projected full-gradient step on ``L_{M_k}`` (descent in Q, V; ascent in lam, mu)."""
    gq, gv, gl, gm = analytic_gradients(point, problem, m_k)
    q = np.clip(point.q - gamma_k * gq, 0.0, sets.v_cap)
    v = np.clip(point.v - gamma_k * gv, 0.0, sets.v_cap)
    lam = project_lambda_matrix(point.lam + gamma_k * gl, sets.eta, sets.lam_cap)
    mu = np.clip(point.mu + gamma_k * gm, 0.0, sets.mu_cap)
    return PrimalDualPoint(q, v, lam, mu)


def deterministic_pd_run(model, schedule, config: RunConfig, checkpoint_fn=None):
    """Iterate :func:`deterministic_pd_step` from the same random start as the stochastic run.

    Returns ``(averages, trace, final_point)``.
    """
    n_states, n_actions = model.n_states, model.n_actions
    T = int(config.T)
    gens = run_generators(config.seed, config.run_index)
    eta = config.eta_vector(n_states, model.sigma)
    zeta = config.resolve_zeta(schedule)
    sets = FeasibleSets.build(model, eta, zeta)
    start = initial_state(n_states, n_actions, sets, gens["init"])
    point = start.as_point()
    problem = SaddleProblem(model, eta, schedule.m_infinity, min(zeta, float(schedule.m_infinity.min())))
    averages = RunningAverages(n_states, n_actions, weighted_mu=True)
    trace = _trace("deterministic_pd", config, T)
    checkpoints = set(checkpoint_steps(T, config.checkpoints_per_decade))
    for k in range(T):
        tau = schedule.tau_at(k)
        averages.add(point, tau)
        if averages.count in checkpoints and checkpoint_fn is not None:
            for name, value in checkpoint_fn(averages.count, averages, point).items():
                trace.add(averages.count, name, value)
        gamma = config.gamma0 / math.sqrt(k + 1 + config.step_offset)
        point = deterministic_pd_step(point, problem, tau, gamma, sets)
    return averages, trace, point
