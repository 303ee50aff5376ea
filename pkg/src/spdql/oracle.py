"""Exact primal/dual solutions of the Q-augmented LP and duality-gap tools."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InternalConsistencyError, InvalidArgument, NumericalFailure
from .mdp import (
    DeterministicPolicy,
    MdpModel,
    StochasticPolicy,
    evaluate_policy,
    transition_matrix_under_policy,
)

GAP_IDENTITY_TOL = 1e-8
GAP_NEGATIVITY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class SaddleProblem:
    """Model plus the LP weights ``eta`` and the diagonal measure ``m``.

    ``m`` is stored as an ``(S, A)`` array of the diagonal of ``M``;
    ``zeta`` is a positive floor for it.
    """

    model: MdpModel
    eta: np.ndarray
    m: np.ndarray
    zeta: float

    def __post_init__(self):
        s, a = self.model.n_states, self.model.n_actions
        eta = np.asarray(self.eta, dtype=float)
        if eta.ndim == 0:
            eta = np.full(s, float(eta))
        m = np.asarray(self.m, dtype=float)
        if eta.shape != (s,):
            raise InvalidArgument(f"eta must have length {s}")
        if m.shape != (s, a):
            raise InvalidArgument(f"measure must have shape ({s}, {a})")
        if np.any(eta <= 0):
            raise InvalidArgument("eta entries must be positive")
        if not self.zeta > 0:
            raise InvalidArgument("zeta must be positive")
        if np.any(m < self.zeta * (1 - 1e-12)):
            raise InvalidArgument("measure has an entry below zeta")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "m", m)

    @classmethod
    def uniform_measure(cls, model: MdpModel, eta) -> "SaddleProblem":
        n = model.n_states * model.n_actions
        return cls(model, eta, np.full((model.n_states, model.n_actions), 1.0 / n), 1.0 / n)

    @property
    def eta_l1(self) -> float:
        return float(np.sum(self.eta))


@dataclass(frozen=True, eq=False)
class PrimalDualPoint:
    q: np.ndarray
    v: np.ndarray
    lam: np.ndarray
    mu: np.ndarray

    def copy(self) -> "PrimalDualPoint":
        return PrimalDualPoint(self.q.copy(), self.v.copy(), self.lam.copy(), self.mu.copy())


@dataclass(frozen=True, eq=False)
class OracleSolution:
    v_star: np.ndarray
    q_star: np.ndarray
    pi_star: DeterministicPolicy
    lambda_star: np.ndarray
    mu_star_scaled: np.ndarray

    @property
    def mu_star(self) -> np.ndarray:
        """Multiplier of the unscaled Lagrangian; equal to ``lambda_star``."""
        return self.lambda_star

    def x_star(self):
        return self.q_star, self.v_star

    def y_star(self):
        return self.lambda_star, self.mu_star

    def to_dict(self) -> dict:
        return {
            "v_star": self.v_star.tolist(),
            "q_star": self.q_star.tolist(),
            "pi_star": self.pi_star.action_of.tolist(),
            "lambda_star": self.lambda_star.tolist(),
            "mu_star_scaled": self.mu_star_scaled.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OracleSolution":
        return cls(
            np.array(data["v_star"]),
            np.array(data["q_star"]),
            DeterministicPolicy(np.array(data["pi_star"])),
            np.array(data["lambda_star"]),
            np.array(data["mu_star_scaled"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _check_point(point: PrimalDualPoint, problem: SaddleProblem):
    s, a = problem.model.n_states, problem.model.n_actions
    for name in ("q", "lam", "mu"):
        if np.shape(getattr(point, name)) != (s, a):
            raise InvalidArgument(f"{name} must have shape ({s}, {a})")
    if np.shape(point.v) != (s,):
        raise InvalidArgument(f"v must have length {s}")


def greedy_actions(q: np.ndarray, tie_tol: float = 0.0) -> np.ndarray:
    """Per-state argmax; among entries within ``tie_tol`` of the max the lowest index wins."""
    best = q.max(axis=1, keepdims=True)
    return np.argmax(q >= best - tie_tol, axis=1)


def solve_optimal(problem: SaddleProblem, tol: float = 1e-10, max_iter: int = 1_000_000) -> OracleSolution:
    """Exact ``V*, Q*, pi*, lambda*`` and the scaled multiplier ``M^-1 lambda*``.

    Value iteration locates the optimal policy, a policy-improvement pass
    confirms it on exact values, and the final numbers come from linear
    solves under that policy.
    """
    if not tol > 0:
        raise InvalidArgument("tol must be positive")
    model = problem.model
    alpha = model.discount
    threshold = tol * (1 - alpha) / (2 * alpha) if alpha > 0 else np.inf
    v = np.zeros(model.n_states)
    for _ in range(max_iter):
        v_new = model.backup(v).max(axis=1)
        done = np.max(np.abs(v_new - v)) <= threshold
        v = v_new
        if done:
            break
    else:
        raise NumericalFailure("value iteration did not converge", estimate=v)

    tie_tol = 1e-10 * max(1.0, model.value_cap)
    actions = greedy_actions(model.backup(v), tie_tol)
    for _ in range(100 * model.n_states * model.n_actions + 10):
        v = evaluate_policy(model, DeterministicPolicy(actions))
        q = model.backup(v)
        current = q[np.arange(model.n_states), actions]
        improve = q.max(axis=1) > current + tie_tol
        if not improve.any():
            break
        actions = np.where(improve, np.argmax(q, axis=1), actions)
    else:
        raise NumericalFailure("policy improvement did not stabilise", estimate=v)

    actions = greedy_actions(q, tie_tol)
    pi_star = DeterministicPolicy(actions)
    v_star = evaluate_policy(model, pi_star)
    q_star = model.backup(v_star)

    p_pi = transition_matrix_under_policy(model, pi_star)
    occupancy = np.linalg.solve(np.eye(model.n_states) - alpha * p_pi.T, problem.eta)
    lam = np.zeros((model.n_states, model.n_actions))
    lam[np.arange(model.n_states), actions] = occupancy
    return OracleSolution(v_star, q_star, pi_star, lam, lam / problem.m)


def lagrangian_I(point: PrimalDualPoint, problem: SaddleProblem) -> float:
    """``eta'V + mu'(alpha P V + R - Q) + lam'(Q - (1 (x) I) V)``."""
    _check_point(point, problem)
    v = np.asarray(point.v, dtype=float)
    resid = problem.model.backup(v) - point.q
    return float(problem.eta @ v + np.sum(point.mu * resid) + np.sum(point.lam * (point.q - v[:, None])))


def lagrangian_M(point: PrimalDualPoint, problem: SaddleProblem, m=None) -> float:
    """Same as :func:`lagrangian_I` with ``mu`` weighted by the measure ``m``."""
    m = problem.m if m is None else np.asarray(m, dtype=float)
    scaled = PrimalDualPoint(point.q, point.v, point.lam, m * np.asarray(point.mu, dtype=float))
    return lagrangian_I(scaled, problem)


def dual_policy_probs(lam: np.ndarray) -> np.ndarray:
    totals = lam.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        raise InvalidArgument("dual policy needs a positive lambda row sum in every state")
    return lam / totals


def gap_via_value_identity(lam_hat: np.ndarray, sol: OracleSolution, problem: SaddleProblem) -> float:
    """``sum_a lam_a' (I - alpha P_pi)(V* - V^pi)`` with ``pi`` the lambda-normalised policy."""
    model = problem.model
    policy = StochasticPolicy(dual_policy_probs(lam_hat))
    v_pi = evaluate_policy(model, policy)
    p_pi = transition_matrix_under_policy(model, policy)
    weights = lam_hat.sum(axis=1)
    return float(weights @ ((np.eye(model.n_states) - model.discount * p_pi) @ (sol.v_star - v_pi)))


def duality_gap(x_hat, y_hat, sol: OracleSolution, problem: SaddleProblem, check: bool = True) -> float:
    """Pseudo duality gap ``L_I(x_hat, y*) - L_I(x*, y_hat)``.

    ``x_hat = (Q_hat, V_hat)`` and ``y_hat = (lam_hat, mu_hat)`` where
    ``mu_hat`` is the measure-weighted dual average. With ``check`` the value
    is cross-checked against :func:`gap_via_value_identity`.
    """
    q_hat, v_hat = x_hat
    lam_hat, mu_hat = y_hat
    lam_hat = np.asarray(lam_hat, dtype=float)
    at_y_star = lagrangian_I(PrimalDualPoint(q_hat, v_hat, sol.lambda_star, sol.mu_star), problem)
    at_x_star = lagrangian_I(PrimalDualPoint(sol.q_star, sol.v_star, lam_hat, mu_hat), problem)
    gap = at_y_star - at_x_star
    if check:
        other = gap_via_value_identity(lam_hat, sol, problem)
        if abs(gap - other) > GAP_IDENTITY_TOL:
            raise InternalConsistencyError(
                f"duality gap representations disagree: direct={gap!r} identity={other!r}"
            )
        if np.all(lam_hat >= 0) and gap < -GAP_NEGATIVITY_TOL:
            raise InternalConsistencyError(f"negative duality gap {gap!r} at a feasible point")
    return gap


@dataclass(frozen=True)
class BoundSet:
    value_inf: float
    value_l2: float
    lambda_l1: float
    mu_l1: float


def solution_bounds(problem: SaddleProblem, sol: OracleSolution | None = None) -> BoundSet:
    """Norm bounds on the optimal solution, verified against ``sol``."""
    model = problem.model
    one_minus = 1.0 - model.discount
    bounds = BoundSet(
        value_inf=model.sigma / one_minus,
        value_l2=np.sqrt(model.n_states) * model.sigma / one_minus,
        lambda_l1=problem.eta_l1 / one_minus,
        mu_l1=problem.eta_l1 / (problem.zeta * one_minus),
    )
    sol = solve_optimal(problem) if sol is None else sol
    slack = 1e-9
    checks = {
        "|Q*_a|_inf <= |V*|_inf": np.max(np.abs(sol.q_star)) <= np.max(np.abs(sol.v_star)) * (1 + slack) + slack,
        "|V*|_inf bound": np.max(np.abs(sol.v_star)) <= bounds.value_inf * (1 + slack),
        "|V*|_2 bound": np.linalg.norm(sol.v_star) <= bounds.value_l2 * (1 + slack),
        "|lambda*|_1 bound": np.sum(np.abs(sol.lambda_star)) <= bounds.lambda_l1 * (1 + slack),
        "|mu*|_1 bound": np.sum(np.abs(sol.mu_star_scaled)) <= bounds.mu_l1 * (1 + slack),
        "sum_a lambda* >= eta": np.all(sol.lambda_star.sum(axis=1) >= problem.eta * (1 - slack)),
        "Q* >= 0": np.all(sol.q_star >= -slack),
    }
    failed = [name for name, ok in checks.items() if not ok]
    if failed:
        raise InternalConsistencyError("solution bounds violated: " + ", ".join(failed))
    return bounds


def policy_suboptimality_bound(gap: float, problem: SaddleProblem) -> float:
    """Certified bound on ``|V* - V^pi_d|_inf`` implied by a duality gap."""
    if gap < -GAP_NEGATIVITY_TOL:
        raise InvalidArgument(f"gap must be non-negative, got {gap}")
    return max(gap, 0.0) / (float(np.min(problem.eta)) * (1.0 - problem.model.discount))
