"""Time-varying state-action measures induced by a behaviour policy.

The measure at step ``k`` is ``tau_k(s, a) = v_k(s) * theta(s, a)`` with
``v_k = (P_theta^T)^k v_0``. Alongside it this module computes the floor
``zeta``, the drift sequence ``beta_k`` and spectral mixing diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InternalConsistencyError, InvalidArgument, InvalidSchedule, NumericalFailure
from .mdp import MdpModel, StochasticPolicy, policy_matrix, transition_matrix_under_policy

SIMPLEX_TOL = 1e-12


def stationary_distribution(p: np.ndarray) -> np.ndarray:
    """Stationary row vector of an irreducible row-stochastic matrix."""
    n = p.shape[0]
    a = p.T - np.eye(n)
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(a, b)
    return np.clip(pi, 0.0, None) / np.sum(np.clip(pi, 0.0, None))


class DistributionSchedule:
    """Measure sequence ``M_k`` generated by a fixed behaviour policy.

    One instance per run thread: the ``v_k`` cache is not locked.
    """

    def __init__(self, model: MdpModel, behavior, v0, zeta: float | None = None,
                 first_step: int = 0):
        theta = np.array(policy_matrix(model, behavior), dtype=float)
        StochasticPolicy(theta)
        if np.any(theta <= 0):
            raise InvalidSchedule("behaviour policy must give every action positive probability")
        v0 = np.asarray(v0, dtype=float)
        if v0.shape != (model.n_states,) or np.any(v0 < 0) or abs(v0.sum() - 1) > SIMPLEX_TOL:
            raise InvalidArgument("v0 must be a distribution over states")
        self.model = model
        self.behavior = theta
        self.v0 = v0
        self.p_beta = transition_matrix_under_policy(model, theta)
        self.v_infinity = stationary_distribution(self.p_beta)
        if np.any(self.v_infinity <= 0):
            raise InvalidSchedule("behaviour chain has a zero stationary probability")
        self.m_infinity = self.v_infinity[:, None] * theta
        self._deflated = self.p_beta.T - np.outer(self.v_infinity, np.ones(model.n_states))
        self._v = [v0]
        self._v_fixed = None
        self._d = [v0 @ self.p_beta - v0]
        self._d_zero_from = None
        self.beta0 = None
        self.zeta = estimate_zeta(self, first_step=first_step) if zeta is None else float(zeta)
        if not self.zeta > 0:
            raise InvalidSchedule("zeta must be positive")

    @property
    def n_states(self) -> int:
        return self.model.n_states

    @property
    def n_actions(self) -> int:
        return self.model.n_actions

    def v_at(self, k: int) -> np.ndarray:
        if k < 0:
            raise InvalidArgument("k must be non-negative")
        if self._v_fixed is not None and k >= self._v_fixed:
            return self._v[-1]
        while len(self._v) <= k:
            nxt = self._v[-1] @ self.p_beta
            if np.array_equal(nxt, self._v[-1]):
                self._v_fixed = len(self._v) - 1
                return self._v[-1]
            self._v.append(nxt)
        return self._v[k]

    def tau_at(self, k: int) -> np.ndarray:
        """``(S, A)`` array of ``tau_k(s, a)``."""
        return self.v_at(k)[:, None] * self.behavior

    def v_difference(self, k: int) -> np.ndarray:
        """``v_{k+1} - v_k`` propagated through the deflated chain.

        The recursion keeps relative accuracy long after plain subtraction
        of the iterates is swamped by rounding.
        """
        if k < 0:
            raise InvalidArgument("k must be non-negative")
        if self._d_zero_from is not None and k >= self._d_zero_from:
            return np.zeros(self.n_states)
        while len(self._d) <= k:
            nxt = self._deflated @ self._d[-1]
            if not np.any(nxt):
                self._d_zero_from = len(self._d)
                return np.zeros(self.n_states)
            self._d.append(nxt)
        return self._d[k]


class TabulatedSchedule:
    """Explicit measure sequence; the last entry is repeated forever.

    Only the positive floor is validated. Samples can only be drawn
    independently per step since there is no underlying chain.
    """

    def __init__(self, model: MdpModel, taus, zeta: float | None = None):
        taus = [np.asarray(t, dtype=float) for t in taus]
        if not taus:
            raise InvalidArgument("at least one measure is required")
        for t in taus:
            if t.shape != (model.n_states, model.n_actions):
                raise InvalidArgument("measure table has the wrong shape")
            if abs(t.sum() - 1) > 1e-9 or np.any(t < 0):
                raise InvalidArgument("each measure must be a distribution over (s, a)")
        self.model = model
        self._taus = taus
        self.m_infinity = taus[-1]
        floor = min(float(t.min()) for t in taus)
        if floor <= 0:
            raise InvalidSchedule("measure table has a zero entry")
        self.zeta = floor if zeta is None else float(zeta)
        if self.zeta > floor:
            raise InvalidSchedule(f"zeta {self.zeta} exceeds the table minimum {floor}")
        self.beta0 = None
        self.behavior = None

    @property
    def n_states(self) -> int:
        return self.model.n_states

    @property
    def n_actions(self) -> int:
        return self.model.n_actions

    def tau_at(self, k: int) -> np.ndarray:
        return self._taus[min(k, len(self._taus) - 1)]


def state_distribution_at(sched: DistributionSchedule, k: int) -> np.ndarray:
    return sched.v_at(k)


def m_matrix_at(sched, k: int) -> np.ndarray:
    """Diagonal of ``M_k`` as a flat action-major vector of length ``S * A``."""
    return sched.tau_at(k).T.ravel()


def default_zeta_horizon(sched: DistributionSchedule) -> int:
    l2 = second_eigenvalue_modulus(sched.p_beta)
    kstar = mixing_threshold_kstar(l2) if 0 < l2 < 1 else 0
    return max(10 * kstar, 1000)


def estimate_zeta(sched: DistributionSchedule, horizon: int | None = None, first_step: int = 0) -> float:
    """``min`` of ``tau_k(s, a)`` over ``first_step <= k <= horizon`` and the stationary measure."""
    if horizon is None:
        horizon = default_zeta_horizon(sched)
    if horizon < first_step:
        raise InvalidArgument("horizon must be >= first_step")
    floor = float(sched.m_infinity.min())
    for k in range(first_step, horizon + 1):
        floor = min(floor, float(sched.tau_at(k).min()))
        if sched._v_fixed is not None and k >= sched._v_fixed:
            break
    if floor <= 0:
        raise InvalidSchedule("state-action measure touches zero; no positive floor exists")
    return floor


def beta_at(sched: DistributionSchedule, k: int, check: bool = False) -> float:
    """Drift bound ``zeta^-2 * max_s |v_{k+1}(s) - v_k(s)|``.

    With ``check`` the bound on ``|M_k^-1 - M_{k+1}^-1|_2`` is verified; the
    inverse difference is formed as ``theta * dv / (tau_k tau_{k+1})`` so the
    comparison stays meaningful below rounding level.
    """
    diff = sched.v_difference(k)
    beta = float(np.max(np.abs(diff))) / sched.zeta**2
    if check:
        tau_k = sched.tau_at(k)
        tau_next = sched.v_at(k + 1)[:, None] * sched.behavior
        inv_diff = np.max(np.abs(sched.behavior * diff[:, None] / (tau_k * tau_next)))
        if inv_diff > beta * (1 + 1e-12):
            raise InternalConsistencyError(
                f"drift bound fails at k={k}: |dM^-1|={inv_diff!r} > beta={beta!r}"
            )
    return beta


def _iterate_deflated(b: np.ndarray, x: np.ndarray, steps: int) -> np.ndarray:
    for _ in range(steps):
        x = b @ x
        nrm = np.linalg.norm(x)
        if nrm == 0.0:
            return x
        x = x / nrm
    return x


def second_eigenvalue_modulus(p_theta: np.ndarray, tol: float = 1e-12, max_iter: int = 200_000,
                              seed: int = 12345) -> float:
    """Modulus of the subdominant eigenvalue of a row-stochastic matrix.

    Power iteration runs on ``P^T - v_inf 1^T``, which removes the unit
    eigenvalue. A dominant real eigenvalue is read from the Rayleigh
    quotient; when the iterates rotate (a complex pair, or a real pair
    ``+r, -r``) the last three iterates are fitted to a two-term recurrence
    ``x_{k+2} = c1 x_{k+1} + c0 x_k`` whose roots carry the modulus.
    """
    p = np.asarray(p_theta, dtype=float)
    n = p.shape[0]
    if n == 1:
        return 0.0
    b = p.T - np.outer(stationary_distribution(p), np.ones(n))
    scale = max(1.0, np.max(np.abs(b)))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    prev = None
    estimate = None
    for it in range(max_iter):
        y = b @ x
        ny = np.linalg.norm(y)
        if ny <= 1e-12 * scale and it >= 2:
            return 0.0
        z = b @ y
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return 0.0
        rq = float(y @ z) / float(y @ y)
        real_resid = np.linalg.norm(z - rq * y) / nz
        if real_resid < 1e-10:
            estimate = abs(rq)
        else:
            w = b @ z
            basis = np.column_stack([y, z])
            coef, *_ = np.linalg.lstsq(basis, w, rcond=None)
            c1, c0 = coef[1], coef[0]
            roots = np.roots([1.0, -c1, -c0])
            estimate = float(np.max(np.abs(roots)))
        if prev is not None and abs(estimate - prev) <= tol * max(1.0, estimate) and it > n:
            return estimate
        prev = estimate
        x = z / nz
    raise NumericalFailure("power iteration for the subdominant eigenvalue did not converge",
                           estimate=estimate)


def mixing_threshold_kstar(lambda2: float) -> int:
    """Smallest ``k*`` from the Taylor argument with ``|l2|^k <= 1/(k+1)`` for ``k >= k*``."""
    if not 0.0 < lambda2 < 1.0:
        raise InvalidArgument("lambda2 must lie in (0, 1)")
    ln = math.log(lambda2)
    ratio = (2.0 * ln + 2.0) / ln**2
    # absorb rounding of the log near exact integers
    return max(0, math.ceil(ratio - 1e-9))


@dataclass
class MixingReport:
    lambda2: float
    c: float
    kstar: int
    d: float
    beta0: float
    horizon: int
    betas: np.ndarray = field(repr=False)
    geometric_ok: bool
    harmonic_ok: bool
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.geometric_ok and self.harmonic_ok


def verify_mixing_bounds(sched: DistributionSchedule, horizon: int = 200, rtol: float = 1e-9) -> MixingReport:
    """Fit ``beta_k <= c |l2|^k`` and confirm ``beta_k <= beta0 / (k+1)`` with ``beta0 = c d``.

    Comparisons are made in log space; underflowed ``beta_k`` (exact zero)
    satisfy both bounds trivially.
    """
    lambda2 = second_eigenvalue_modulus(sched.p_beta)
    betas = np.array([beta_at(sched, k) for k in range(horizon + 1)])
    positive = betas > 0
    if not positive.any():
        return MixingReport(lambda2, 0.0, 0, 1.0, 0.0, horizon, betas, True, True)
    if lambda2 <= 0.0:
        raise InvalidSchedule("drift is non-zero but the chain has no subdominant mode")
    if lambda2 >= 1.0:
        raise InvalidSchedule("behaviour chain is not ergodic")
    ks = np.arange(horizon + 1)
    log_l2 = math.log(lambda2)
    log_ratio = np.full(horizon + 1, -np.inf)
    log_ratio[positive] = np.log(betas[positive]) - ks[positive] * log_l2
    log_c = float(np.max(log_ratio))
    kstar = mixing_threshold_kstar(lambda2)
    log_d = -kstar * log_l2
    violations = []
    geometric_ok = True
    harmonic_ok = True
    for k in np.flatnonzero(positive):
        lb = math.log(betas[k])
        if lb > log_c + k * log_l2 + rtol:
            geometric_ok = False
            violations.append(("geometric", int(k)))
        if lb > log_c + log_d - math.log(k + 1) + rtol:
            harmonic_ok = False
            violations.append(("harmonic", int(k)))
    c = math.exp(log_c)
    d = math.exp(log_d)
    report = MixingReport(lambda2, c, kstar, d, c * d, horizon, betas, geometric_ok, harmonic_ok, violations)
    sched.beta0 = report.beta0
    return report


def two_state_schedule(model: MdpModel | None = None, zeta: float | None = None,
                       first_step: int = 0) -> DistributionSchedule:
    """Behaviour policy ``[0.2, 0.8] / [0.7, 0.3]`` started from ``v0 = [0.4, 0.6]``."""
    from .mdp import two_state_mdp

    model = two_state_mdp() if model is None else model
    theta = np.array([[0.2, 0.8], [0.7, 0.3]])
    return DistributionSchedule(model, theta, np.array([0.4, 0.6]), zeta=zeta, first_step=first_step)


def uniform_schedule(model: MdpModel, v0=None, zeta: float | None = None) -> DistributionSchedule:
    """Uniform behaviour policy, started from ``v0`` (default: its stationary law)."""
    theta = StochasticPolicy.uniform(model.n_states, model.n_actions).probs
    if v0 is None:
        v0 = stationary_distribution(transition_matrix_under_policy(model, theta))
    return DistributionSchedule(model, theta, v0, zeta=zeta)


def random_ergodic_schedule(model: MdpModel, rng: np.random.Generator) -> DistributionSchedule:
    theta = rng.random((model.n_states, model.n_actions)) + 0.1
    theta /= theta.sum(axis=1, keepdims=True)
    v0 = rng.random(model.n_states)
    return DistributionSchedule(model, theta, v0 / v0.sum())
