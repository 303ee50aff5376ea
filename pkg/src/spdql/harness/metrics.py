"""Checkpoint metrics computed from a learner's current estimates."""

from __future__ import annotations

import enum

import numpy as np

from ..errors import ConfigError
from ..mdp import StochasticPolicy, evaluate_policy, sample_step
from ..oracle import duality_gap, dual_policy_probs, gap_via_value_identity, greedy_actions

AVG_REWARD_WINDOW = 8


class MetricKind(str, enum.Enum):
    Q_ERROR = "q_error"
    DUAL_POLICY_ERROR = "dual_policy_error"
    PRIMAL_POLICY_ERROR = "primal_policy_error"
    DUALITY_GAP = "duality_gap"
    AVG_REWARD = "avg_reward"
    VALUE_SUBOPTIMALITY = "value_suboptimality"


# estimate fields each metric reads
REQUIRES = {
    MetricKind.Q_ERROR: ("q",),
    MetricKind.DUAL_POLICY_ERROR: ("lam",),
    MetricKind.PRIMAL_POLICY_ERROR: ("q",),
    MetricKind.DUALITY_GAP: ("lam",),
    MetricKind.AVG_REWARD: ("q",),
    MetricKind.VALUE_SUBOPTIMALITY: ("lam",),
}


def available(kind: MetricKind, estimates) -> bool:
    return all(getattr(estimates, f, None) is not None for f in REQUIRES[MetricKind(kind)])


def _one_hot(actions, n_actions):
    out = np.zeros((len(actions), n_actions))
    out[np.arange(len(actions)), actions] = 1.0
    return out


def q_error(q_hat, q_star) -> float:
    """``sum_a |Q*_a - Q_hat_a|_inf``."""
    return float(np.sum(np.max(np.abs(np.asarray(q_star) - np.asarray(q_hat)), axis=0)))


def policy_error(probs, pi_star, norm: str = "inf") -> float:
    """``sum_s |e_{pi*(s)} - probs_s|`` in the chosen per-state norm."""
    diff = _one_hot(pi_star, probs.shape[1]) - probs
    if norm == "inf":
        per_state = np.max(np.abs(diff), axis=1)
    elif norm == "2":
        per_state = np.linalg.norm(diff, axis=1)
    else:
        raise ConfigError(f"unknown policy norm {norm!r}", field="metrics")
    return float(np.sum(per_state))


def rollout_average_reward(model, actions, rng, start_state: int = 0, window: int = AVG_REWARD_WINDOW) -> float:
    """Mean reward over ``window`` steps of the deterministic policy ``actions``."""
    s, total = start_state, 0.0
    for _ in range(window):
        s, r = sample_step(model, s, int(actions[s]), rng)
        total += r
    return total / window


def compute_metric(kind, estimates, oracle=None, model=None, *, problem=None, rng=None,
                   window_samples: int = AVG_REWARD_WINDOW, start_state: int = 0,
                   policy_norm: str = "inf", check_gap: bool = True) -> float:
    """Evaluate one metric.

    Parameters
    ----------
    kind : MetricKind or str
    estimates : object
        Anything with ``q``, ``v``, ``lam`` and ``mu_weighted`` attributes
        (``None`` where the learner has no such estimate).
    oracle : OracleSolution
        Needed by every error metric and by the duality gap.
    model : MdpModel
    problem : SaddleProblem
        Needed by the duality gap.
    rng : numpy.random.Generator
        Source of the reward rollout for ``avg_reward``.
    """
    kind = MetricKind(kind)
    if not available(kind, estimates):
        raise ConfigError(f"{kind.value} needs the learner's {'/'.join(REQUIRES[kind])} estimate", field="metrics")
    if kind is MetricKind.AVG_REWARD:
        if model is None or rng is None:
            raise ConfigError("avg_reward needs the model and an evaluation generator", field="metrics")
        return rollout_average_reward(model, greedy_actions(np.asarray(estimates.q)), rng,
                                      start_state, window_samples)
    if oracle is None:
        raise ConfigError(f"{kind.value} needs the oracle solution", field="metrics")
    if kind is MetricKind.Q_ERROR:
        return q_error(estimates.q, oracle.q_star)
    if kind is MetricKind.PRIMAL_POLICY_ERROR:
        probs = _one_hot(greedy_actions(np.asarray(estimates.q)), oracle.q_star.shape[1])
        return policy_error(probs, oracle.pi_star.action_of, policy_norm)
    if kind is MetricKind.DUAL_POLICY_ERROR:
        return policy_error(dual_policy_probs(np.asarray(estimates.lam)), oracle.pi_star.action_of, policy_norm)
    if kind is MetricKind.VALUE_SUBOPTIMALITY:
        if model is None:
            raise ConfigError("value_suboptimality needs the model", field="metrics")
        v_pi = evaluate_policy(model, StochasticPolicy(dual_policy_probs(np.asarray(estimates.lam))))
        return float(np.max(np.abs(oracle.v_star - v_pi)))
    if problem is None:
        raise ConfigError("duality_gap needs the saddle problem (diagnostic mode)", field="metrics")
    lam = np.asarray(estimates.lam)
    if estimates.q is None or estimates.v is None or estimates.mu_weighted is None:
        return gap_via_value_identity(lam, oracle, problem)
    return duality_gap((estimates.q, estimates.v), (lam, estimates.mu_weighted), oracle, problem,
                       check=check_gap)
