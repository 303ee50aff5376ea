"""Finite discounted MDPs, policies and exact policy evaluation.

Conventions used throughout the package:

* ``transitions[a, s, s2]`` is the probability of moving ``s -> s2`` under
  action ``a``.
* State-action quantities (Q, lambda, mu, expected rewards) are ``(S, A)``
  arrays. When a flat stacked vector is needed it is action-major, i.e.
  ``x.T.ravel()`` (block ``a`` holds the ``S`` entries of action ``a``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidArgument, NumericalError

ROW_SUM_TOL = 1e-12

UP, DOWN, LEFT, RIGHT = range(4)
GRID_ACTIONS = ("up", "down", "left", "right")


@dataclass(frozen=True, eq=False)
class RewardModel:
    """Reward law keyed on ``(s, a)`` or, optionally, ``(s, a, s')``.

    ``lo`` and ``hi`` have shape ``(S, A)`` or ``(S, A, S)``. For the
    deterministic kind they are the same array.
    """

    kind: str
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def deterministic(cls, table) -> "RewardModel":
        table = np.array(table, dtype=float)
        table.setflags(write=False)
        return cls("deterministic", table, table)

    @classmethod
    def uniform_interval(cls, lo, hi) -> "RewardModel":
        lo = np.array(lo, dtype=float)
        hi = np.array(hi, dtype=float)
        if lo.shape != hi.shape:
            raise InvalidArgument("reward lo/hi tables differ in shape")
        if np.any(lo > hi):
            raise InvalidArgument("uniform reward interval with lo > hi")
        lo.setflags(write=False)
        hi.setflags(write=False)
        return cls("uniform_interval", lo, hi)

    def __post_init__(self):
        if self.kind not in ("deterministic", "uniform_interval"):
            raise InvalidArgument(f"unknown reward kind {self.kind!r}")

    @property
    def mean(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def expected(self, n_states: int) -> np.ndarray:
        """Expected reward ``r(s, a, s')`` as an ``(S, A, S)`` array."""
        m = self.mean
        if m.ndim == 2:
            return np.repeat(m[:, :, None], n_states, axis=2)
        return m

    def sample(self, s: int, a: int, s_next: int, rng: np.random.Generator) -> float:
        idx = (s, a) if self.lo.ndim == 2 else (s, a, s_next)
        lo = float(self.lo[idx])
        if self.kind == "deterministic":
            return lo
        return lo + (float(self.hi[idx]) - lo) * rng.random()


@dataclass(frozen=True, eq=False)
class MdpModel:
    """A finite MDP ``(S, A, P, r, alpha)`` with reward bound ``sigma``."""

    transitions: np.ndarray
    rewards: RewardModel
    discount: float
    sigma: float
    name: str = field(default="mdp", compare=False)

    def __post_init__(self):
        p = np.array(self.transitions, dtype=float)
        if p.ndim != 3 or p.shape[1] != p.shape[2]:
            raise InvalidArgument(f"transitions must have shape (A, S, S), got {p.shape}")
        if np.any(p < 0):
            raise InvalidArgument("negative transition probability")
        if np.max(np.abs(p.sum(axis=2) - 1.0)) > ROW_SUM_TOL:
            raise InvalidArgument("transition rows must sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "transitions", p)
        n_actions, n_states, _ = p.shape
        if not 0.0 <= self.discount < 1.0:
            raise InvalidArgument(f"discount must lie in [0, 1), got {self.discount}")
        if self.sigma < 1.0:
            raise InvalidArgument(f"sigma must be >= 1, got {self.sigma}")
        lo = self.rewards.lo
        if lo.shape not in ((n_states, n_actions), (n_states, n_actions, n_states)):
            raise InvalidArgument(f"reward table shape {lo.shape} does not match model")
        if np.any(lo < 0) or np.any(self.rewards.hi > self.sigma):
            raise InvalidArgument("rewards must lie in [0, sigma]")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[0]

    @cached_property
    def expected_rewards(self) -> np.ndarray:
        """``R[s, a] = sum_s' P_a(s, s') r(s, a, s')``."""
        r = self.rewards.expected(self.n_states)
        return np.einsum("ast,sat->sa", self.transitions, r)

    @property
    def value_cap(self) -> float:
        return self.sigma / (1.0 - self.discount)

    def backup(self, v: np.ndarray) -> np.ndarray:
        """``R + alpha * P_a V`` as an ``(S, A)`` array."""
        return self.expected_rewards + self.discount * np.einsum("ast,t->sa", self.transitions, v)


@dataclass(frozen=True, eq=False)
class StochasticPolicy:
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 2:
            raise InvalidArgument("policy probabilities must be a (S, A) matrix")
        if np.any(p < 0) or np.max(np.abs(p.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
            raise InvalidArgument("policy rows must lie in the probability simplex")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "StochasticPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))


@dataclass(frozen=True, eq=False)
class DeterministicPolicy:
    action_of: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.action_of, dtype=int).copy()
        a.setflags(write=False)
        object.__setattr__(self, "action_of", a)

    def as_stochastic(self, n_actions: int) -> StochasticPolicy:
        if np.any(self.action_of < 0) or np.any(self.action_of >= n_actions):
            raise InvalidArgument("deterministic policy selects an unknown action")
        probs = np.zeros((len(self.action_of), n_actions))
        probs[np.arange(len(self.action_of)), self.action_of] = 1.0
        return StochasticPolicy(probs)


def policy_matrix(model: MdpModel, policy) -> np.ndarray:
    """Return the ``(S, A)`` probability matrix of either policy type."""
    if isinstance(policy, DeterministicPolicy):
        if len(policy.action_of) != model.n_states:
            raise InvalidArgument("policy length does not match number of states")
        return policy.as_stochastic(model.n_actions).probs
    probs = policy.probs if isinstance(policy, StochasticPolicy) else np.asarray(policy, dtype=float)
    if probs.shape != (model.n_states, model.n_actions):
        raise InvalidArgument(
            f"policy shape {probs.shape} != ({model.n_states}, {model.n_actions})"
        )
    return probs


def transition_matrix_under_policy(model: MdpModel, policy) -> np.ndarray:
    theta = policy_matrix(model, policy)
    return np.einsum("sa,ast->st", theta, model.transitions)


def expected_reward_under_policy(model: MdpModel, policy) -> np.ndarray:
    theta = policy_matrix(model, policy)
    return np.sum(theta * model.expected_rewards, axis=1)


def evaluate_policy(model: MdpModel, policy) -> np.ndarray:
    """Exact value of ``policy``: solve ``(I - alpha P_pi) V = R_pi``."""
    p_pi = transition_matrix_under_policy(model, policy)
    r_pi = expected_reward_under_policy(model, policy)
    a = np.eye(model.n_states) - model.discount * p_pi
    try:
        v = np.linalg.solve(a, r_pi)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"policy evaluation system is singular: {exc}") from exc
    if not np.all(np.isfinite(v)):
        raise NumericalError("policy evaluation produced non-finite values")
    return v


def sample_step(model: MdpModel, state: int, action: int, rng: np.random.Generator):
    """Draw ``(next_state, reward)`` from the model at ``(state, action)``."""
    if not (0 <= state < model.n_states and 0 <= action < model.n_actions):
        raise InvalidArgument(f"invalid state/action pair ({state}, {action})")
    row = model.transitions[action, state]
    s_next = int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))
    s_next = min(s_next, model.n_states - 1)
    while row[s_next] == 0.0:
        # guards the rounding tail of the cumulative sum
        s_next -= 1
    return s_next, model.rewards.sample(state, action, s_next, rng)


def two_state_mdp() -> MdpModel:
    """Two-state, two-action benchmark with rewards keyed on ``(s, a)``.

    Per-action reward vectors are ``R_1 = [3, 1]`` and ``R_2 = [2, 1]``.
    """
    p1 = [[0.2, 0.8], [0.3, 0.7]]
    p2 = [[0.5, 0.5], [0.7, 0.3]]
    rewards = RewardModel.deterministic([[3.0, 2.0], [1.0, 1.0]])
    return MdpModel(np.array([p1, p2]), rewards, discount=0.9, sigma=3.0, name="two_state_mdp")


def grid_cell(state: int, width: int) -> tuple[int, int]:
    return state % width, state // width


def grid_world(
    width: int = 2,
    height: int = 2,
    step_reward_interval=(0.0, 0.2),
    goal_reward_interval=(1.0, 1.2),
    discount: float = 0.9,
) -> MdpModel:
    """Deterministic grid world; the start is the bottom-left cell (state 0).

    State ``y * width + x`` is the cell in column ``x`` and row ``y`` (row 0 at
    the bottom). Actions are up, down, left, right; a move across the
    boundary leaves the agent in place. The goal is the top-right cell and
    its reward interval applies to every action taken there.
    """
    if width < 1 or height < 1:
        raise InvalidArgument("grid dimensions must be >= 1")
    for lo, hi in (step_reward_interval, goal_reward_interval):
        if not 0.0 <= lo <= hi:
            raise InvalidArgument(f"invalid reward interval [{lo}, {hi}]")
    n = width * height
    p = np.zeros((4, n, n))
    moves = {UP: (0, 1), DOWN: (0, -1), LEFT: (-1, 0), RIGHT: (1, 0)}
    for s in range(n):
        x, y = grid_cell(s, width)
        for a, (dx, dy) in moves.items():
            nx, ny = x + dx, y + dy
            if not (0 <= nx < width and 0 <= ny < height):
                nx, ny = x, y
            p[a, s, ny * width + nx] = 1.0
    lo = np.full((n, 4), float(step_reward_interval[0]))
    hi = np.full((n, 4), float(step_reward_interval[1]))
    lo[n - 1, :] = goal_reward_interval[0]
    hi[n - 1, :] = goal_reward_interval[1]
    sigma = max(1.0, float(np.max(hi)))
    return MdpModel(p, RewardModel.uniform_interval(lo, hi), discount, sigma,
                    name=f"grid_world_{width}x{height}")


def mdp_to_dict(model: MdpModel) -> dict:
    rewards = {"kind": model.rewards.kind}
    if model.rewards.kind == "deterministic":
        rewards["table"] = model.rewards.lo.tolist()
    else:
        rewards["lo"] = model.rewards.lo.tolist()
        rewards["hi"] = model.rewards.hi.tolist()
    return {
        "n_states": model.n_states,
        "n_actions": model.n_actions,
        "discount": model.discount,
        "sigma": model.sigma,
        "transitions": model.transitions.tolist(),
        "rewards": rewards,
    }


def mdp_from_dict(data: dict, name: str = "mdp") -> MdpModel:
    """Build a model from the MDP definition schema (see ``harness.config``)."""
    try:
        p = np.array(data["transitions"], dtype=float)
        rw = data["rewards"]
        kind = rw.get("kind", "deterministic")
        if kind == "deterministic":
            rewards = RewardModel.deterministic(rw["table"])
        elif kind == "uniform_interval":
            rewards = RewardModel.uniform_interval(rw["lo"], rw["hi"])
        else:
            raise InvalidArgument(f"unknown reward kind {kind!r}")
        model = MdpModel(p, rewards, float(data["discount"]), float(data["sigma"]), name=name)
    except KeyError as exc:
        raise InvalidArgument(f"MDP definition is missing field {exc.args[0]!r}") from exc
    for key, actual in (("n_states", model.n_states), ("n_actions", model.n_actions)):
        if key in data and int(data[key]) != actual:
            raise InvalidArgument(f"{key}={data[key]} does not match transitions ({actual})")
    return model


def random_mdp(n_states: int, n_actions: int, rng: np.random.Generator,
               discount: float = 0.9, sigma: float = 1.0, density: float = 1.0) -> MdpModel:
    """Random dense model; handy for property tests and sweeps."""
    p = rng.random((n_actions, n_states, n_states))
    if density < 1.0:
        p *= rng.random(p.shape) < density
        p[:, np.arange(n_states), rng.integers(n_states, size=n_states)] += 1e-3
    p /= p.sum(axis=2, keepdims=True)
    table = sigma * rng.random((n_states, n_actions))
    return MdpModel(p, RewardModel.deterministic(table), discount, sigma, name="random")
