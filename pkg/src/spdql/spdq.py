"""Stochastic primal-dual Q-learning.

Each step observes one behaviour transition ``(s, a, s', r)`` and draws an
independent uniform coordinate ``(s_hat, a_hat)``. The two samples give
unbiased estimates of the gradients of

    L_M(Q, V, lam, mu) = eta'V + mu' M (alpha P V + R - Q) + lam' (Q - (1 (x) I) V)

after which the iterates are projected back onto their boxes (and the
half-space ``sum_a lam(s, a) >= eta(s)`` for ``lam``).
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InfeasibleSetError, InternalConsistencyError, InvalidArgument
from .mdp import DeterministicPolicy, StochasticPolicy
from .oracle import PrimalDualPoint, SaddleProblem, dual_policy_probs, greedy_actions
from .sampling import UniformPairs, make_env_sampler, run_generators
from .trace import RunTrace

MdpShape = namedtuple("MdpShape", "n_states n_actions discount sigma")
FEAS_TOL = 1e-9


# -- feasible sets and projections ------------------------------------------------------


@dataclass(frozen=True)
class FeasibleSets:
    """Boxes for ``V, Q`` (``v_cap``), ``lam`` (``lam_cap``) and ``mu`` (``mu_cap``)."""

    v_cap: float
    lam_cap: float
    mu_cap: float
    eta: np.ndarray

    @classmethod
    def build(cls, model, eta, zeta: float) -> "FeasibleSets":
        eta = np.asarray(eta, dtype=float)
        one_minus = 1.0 - model.discount
        l1 = float(np.sum(eta))
        sets = cls(model.sigma / one_minus, l1 / one_minus, l1 / (zeta * one_minus), eta)
        if np.any(eta > model.n_actions * sets.lam_cap):
            raise InfeasibleSetError("lambda feasible set is empty for this eta")
        return sets

    def contains(self, state, tol: float = FEAS_TOL) -> list:
        """Names of the violated invariants (empty when feasible)."""
        bad = []
        for name, arr, cap in (("v", state.v, self.v_cap), ("q", state.q, self.v_cap),
                               ("lam", state.lam, self.lam_cap), ("mu", state.mu, self.mu_cap)):
            if np.min(arr) < -tol or np.max(arr) > cap * (1 + tol) + tol:
                bad.append(name)
        if np.any(state.lam.sum(axis=1) < self.eta * (1 - tol) - tol):
            bad.append("lam_halfspace")
        return bad


def project_value_box(x, cap: float):
    return np.clip(x, 0.0, cap)


def project_mu(mu, cap: float):
    return np.clip(mu, 0.0, cap)


def project_lambda(lam_row, eta_s: float, cap: float) -> np.ndarray:
    """Euclidean projection onto ``{x : 0 <= x <= cap, sum(x) >= eta_s}``.

    The answer is ``clip(y + t, 0, cap)`` with ``t = 0`` if that already
    satisfies the sum constraint, otherwise the unique ``t > 0`` making the
    sum equal ``eta_s``. The clipped sum is piecewise linear in ``t`` with
    breakpoints ``-y_i`` and ``cap - y_i``, so ``t`` is found exactly by
    sorting them.
    """
    y = np.asarray(lam_row, dtype=float)
    n = y.size
    if eta_s > n * cap * (1 + 1e-12):
        raise InfeasibleSetError(f"sum constraint {eta_s} exceeds {n} x cap {cap}")
    x = np.clip(y, 0.0, cap)
    if x.sum() >= eta_s:
        return x

    def total(t):
        return float(np.clip(y + t, 0.0, cap).sum())

    points = np.unique(np.concatenate([-y, cap - y]))
    points = points[points > 0]
    lo, f_lo = 0.0, float(x.sum())
    for t in points:
        f_t = total(t)
        if f_t >= eta_s:
            if f_t == f_lo:
                return np.clip(y + t, 0.0, cap)
            t_star = lo + (eta_s - f_lo) * (t - lo) / (f_t - f_lo)
            return np.clip(y + t_star, 0.0, cap)
        lo, f_lo = t, f_t
    # every coordinate saturated before the sum was met; only reachable through rounding
    return _bisect_shift(y, eta_s, cap)


def _bisect_shift(y, eta_s, cap):
    lo, hi = 0.0, cap - float(np.min(y)) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.clip(y + mid, 0.0, cap).sum() >= eta_s:
            hi = mid
        else:
            lo = mid
    return np.clip(y + hi, 0.0, cap)


def project_lambda_matrix(lam, eta, cap: float) -> np.ndarray:
    return np.vstack([project_lambda(row, e, cap) for row, e in zip(lam, eta)])


# -- iterates, step sizes, averages --------------------------------------------------------


@dataclass
class IterateState:
    q: np.ndarray
    v: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    k: int = 0

    def copy(self) -> "IterateState":
        return IterateState(self.q.copy(), self.v.copy(), self.lam.copy(), self.mu.copy(), self.k)

    def as_point(self) -> PrimalDualPoint:
        return PrimalDualPoint(self.q, self.v, self.lam, self.mu)


@dataclass(frozen=True)
class StepSchedule:
    """``gamma_k = gamma0 / sqrt(k + 1 + offset)``."""

    gamma0: float
    offset: float = 0.0

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise InvalidArgument("gamma0 must be positive")
        if self.offset < 0:
            raise InvalidArgument("step offset must be non-negative")


def step_size(sched: StepSchedule, k: int) -> float:
    if k < 0:
        raise InvalidArgument("k must be non-negative")
    return sched.gamma0 / math.sqrt(k + 1 + sched.offset)


class RunningAverages:
    """Arithmetic means of the pre-update iterates ``x_0 .. x_{T-1}``."""

    def __init__(self, n_states: int, n_actions: int, weighted_mu: bool = False):
        self.q_sum = np.zeros((n_states, n_actions))
        self.v_sum = np.zeros(n_states)
        self.lam_sum = np.zeros((n_states, n_actions))
        self.mu_weighted_sum = np.zeros((n_states, n_actions)) if weighted_mu else None
        self.count = 0

    def add(self, state: IterateState, tau=None):
        self.q_sum += state.q
        self.v_sum += state.v
        self.lam_sum += state.lam
        if self.mu_weighted_sum is not None:
            self.mu_weighted_sum += tau * state.mu
        self.count += 1

    @property
    def q_bar(self):
        return self.q_sum / self.count

    @property
    def v_bar(self):
        return self.v_sum / self.count

    @property
    def lam_bar(self):
        return self.lam_sum / self.count

    @property
    def mu_bar_weighted(self):
        return None if self.mu_weighted_sum is None else self.mu_weighted_sum / self.count


# -- gradients -------------------------------------------------------------------------------


def analytic_gradients(point: PrimalDualPoint, problem: SaddleProblem, m=None):
    """Exact ``(grad_Q, grad_V, grad_lam, grad_mu)`` of ``L_M``."""
    model = problem.model
    m = problem.m if m is None else np.asarray(m, dtype=float)
    q, v, lam, mu = point.q, np.asarray(point.v, dtype=float), point.lam, point.mu
    m_mu = m * mu
    grad_q = lam - m_mu
    grad_v = problem.eta - lam.sum(axis=1) + model.discount * np.einsum("ast,sa->t", model.transitions, m_mu)
    grad_lam = q - v[:, None]
    grad_mu = m * (model.backup(v) - q)
    return grad_q, grad_v, grad_lam, grad_mu


def gradient_norm_bounds(n_states, n_actions, eta, sigma, alpha, zeta):
    """Almost-sure bounds ``(K1, K2)`` on the stochastic primal / dual gradients."""
    if not (zeta > 0 and 1 - alpha > 0):
        raise InvalidArgument("need zeta > 0 and alpha < 1")
    eta_l1 = float(np.sum(np.broadcast_to(np.asarray(eta, dtype=float), (n_states,))))
    base = math.sqrt(13) * n_states * n_actions / (1 - alpha)
    return base * eta_l1 / zeta, base * sigma


def stochastic_gradient_norms(state: IterateState, sample, uniform, eta, alpha):
    """Euclidean norms of the sparse stochastic primal and dual gradients."""
    s, a, s_next, r = sample
    sh, ah = uniform
    n_states, n_actions = state.q.shape
    sa = n_states * n_actions
    lam_h = state.lam[sh, ah]
    mu_sa = state.mu[s, a]
    gq = {(sh, ah): sa * lam_h}
    gq[(s, a)] = gq.get((s, a), 0.0) - mu_sa
    gv = {sh: n_states * eta[sh] - sa * lam_h}
    gv[s_next] = gv.get(s_next, 0.0) + alpha * mu_sa
    primal = math.sqrt(sum(x * x for x in gq.values()) + sum(x * x for x in gv.values()))
    g_lam = sa * (state.q[sh, ah] - state.v[sh])
    g_mu = alpha * state.v[s_next] + r - state.q[s, a]
    return primal, math.hypot(g_lam, g_mu)


# -- one step ----------------------------------------------------------------------------------


def apply_stochastic_update(state: IterateState, sample, uniform, gamma: float, eta, alpha: float) -> IterateState:
    """Pre-projection sparse update; returns a new state."""
    s, a, s_next, r = sample
    sh, ah = uniform
    n_states, n_actions = state.q.shape
    sa = n_states * n_actions
    q0, v0, lam0, mu0 = state.q, state.v, state.lam, state.mu
    q = q0.copy()
    v = v0.copy()
    lam = lam0.copy()
    mu = mu0.copy()
    q[s, a] += gamma * mu0[s, a]
    q[sh, ah] -= gamma * sa * lam0[sh, ah]
    v[sh] -= gamma * (n_states * eta[sh] - sa * lam0[sh, ah])
    v[s_next] -= gamma * alpha * mu0[s, a]
    lam[sh, ah] += gamma * sa * (q0[sh, ah] - v0[sh])
    mu[s, a] += gamma * (alpha * v0[s_next] + r - q0[s, a])
    return IterateState(q, v, lam, mu, state.k + 1)


def spdq_step(state: IterateState, env_sample, uniform_sample, gamma_k: float, sets: FeasibleSets,
              alpha: float, check: bool = True) -> IterateState:
    """One full step: sparse stochastic update followed by projection."""
    if check:
        bad = sets.contains(state)
        if bad:
            raise ContractError(f"iterate infeasible on entry: {bad}")
    s, a, _, _ = env_sample
    sh, ah = uniform_sample
    nxt = apply_stochastic_update(state, env_sample, uniform_sample, gamma_k, sets.eta, alpha)
    nxt.v = project_value_box(nxt.v, sets.v_cap)
    for ss, aa in ((s, a), (sh, ah)):
        nxt.q[ss, aa] = min(max(nxt.q[ss, aa], 0.0), sets.v_cap)
    nxt.lam[sh] = project_lambda(nxt.lam[sh], sets.eta[sh], sets.lam_cap)
    nxt.mu[s, a] = min(max(nxt.mu[s, a], 0.0), sets.mu_cap)
    return nxt


def initial_state(n_states: int, n_actions: int, sets: FeasibleSets, rng: np.random.Generator) -> IterateState:
    """Uniform draws from each box, then ``lam`` projected onto its half-space."""
    v = rng.uniform(0.0, sets.v_cap, n_states)
    q = rng.uniform(0.0, sets.v_cap, (n_states, n_actions))
    lam = rng.uniform(0.0, sets.lam_cap, (n_states, n_actions))
    mu = rng.uniform(0.0, sets.mu_cap, (n_states, n_actions))
    lam = project_lambda_matrix(lam, sets.eta, sets.lam_cap)
    return IterateState(q, v, lam, mu, 0)


# -- policies ----------------------------------------------------------------------------------


def primal_policy(q_bar) -> DeterministicPolicy:
    return DeterministicPolicy(greedy_actions(np.asarray(q_bar, dtype=float)))


def dual_policy(lam_bar) -> StochasticPolicy:
    return StochasticPolicy(dual_policy_probs(np.asarray(lam_bar, dtype=float)))


# -- full run ----------------------------------------------------------------------------------


@dataclass
class RunConfig:
    T: int
    gamma0: float = 1.0
    eta: object = None
    zeta: float | None = None
    seed: int = 0
    run_index: int = 0
    checkpoints_per_decade: int = 4
    diagnostic: bool = False
    sampling: str = "trajectory"
    step_offset: float = 0.0
    check_gradient_bounds: bool = True

    def __post_init__(self):
        if int(self.T) < 1:
            raise InvalidArgument("T must be >= 1")
        if self.sampling not in ("trajectory", "iid"):
            raise InvalidArgument(f"unknown sampling mode {self.sampling!r}")

    def eta_vector(self, n_states: int, sigma: float) -> np.ndarray:
        if self.eta is None:
            eta = np.full(n_states, sigma / n_states)
        else:
            eta = np.broadcast_to(np.asarray(self.eta, dtype=float), (n_states,)).copy()
        if np.any(eta <= 0):
            raise InvalidArgument("eta must be positive")
        return eta

    def resolve_zeta(self, schedule) -> float:
        zeta = self.zeta if self.zeta is not None else getattr(schedule, "zeta", None)
        if zeta is None or not zeta > 0:
            raise InvalidArgument("zeta must be supplied (model-free mode) and positive")
        return float(zeta)


def checkpoint_steps(T: int, per_decade: int = 4) -> list:
    """Iterate counts ``{ceil(10^(j/per_decade))} U {T}`` capped at ``T``."""
    steps = set()
    j = 0
    while True:
        t = math.ceil(10 ** (j / per_decade) - 1e-9)
        if t > T:
            break
        steps.add(t)
        j += 1
    steps.add(int(T))
    return sorted(steps)


@dataclass
class RunStats:
    max_primal_grad: float = 0.0
    max_dual_grad: float = 0.0
    primal_violations: int = 0
    dual_violations: int = 0
    k1: float = 0.0
    k2: float = 0.0
    extra: dict = field(default_factory=dict)


def run(model, schedule, config: RunConfig, stream=None, checkpoint_fn=None, record=None):
    """Execute ``config.T`` steps.

    ``model`` may be an :class:`~spdql.mdp.MdpModel` or, when ``stream`` is
    supplied, just an :data:`MdpShape`. ``checkpoint_fn(t, averages, state)``
    returns a ``{metric: value}`` dict recorded at every checkpoint; ``t`` is
    the number of averaged iterates. ``record`` (a list) receives
    ``(state_before, sample, uniform, gamma)`` for every step.

    Returns ``(averages, trace, stats)``.
    """
    n_states, n_actions = model.n_states, model.n_actions
    alpha, sigma = model.discount, model.sigma
    T = int(config.T)
    gens = run_generators(config.seed, config.run_index)
    eta = config.eta_vector(n_states, sigma)
    zeta = config.resolve_zeta(schedule)
    sets = FeasibleSets.build(model, eta, zeta)
    state = initial_state(n_states, n_actions, sets, gens["init"])
    if config.diagnostic and schedule is None:
        raise InvalidArgument("diagnostic mode needs the schedule")
    env = make_env_sampler(config.sampling, model, schedule, gens["env"], stream=stream)
    uni = UniformPairs(n_states, n_actions, gens["uniform"])
    steps = StepSchedule(config.gamma0, config.step_offset)
    averages = RunningAverages(n_states, n_actions, weighted_mu=config.diagnostic)
    k1, k2 = gradient_norm_bounds(n_states, n_actions, eta, sigma, alpha, zeta)
    stats = RunStats(k1=k1, k2=k2)
    trace = RunTrace(metadata={"algorithm": "spdq", "seed": config.seed, "gamma0": config.gamma0, "T": T})
    checkpoints = set(checkpoint_steps(T, config.checkpoints_per_decade))

    q, v, lam, mu = state.q, state.v, state.lam, state.mu
    sa = n_states * n_actions
    v_cap, lam_cap, mu_cap = sets.v_cap, sets.lam_cap, sets.mu_cap
    eta_l = eta.tolist()
    check_bounds = config.check_gradient_bounds
    k1_tol, k2_tol = k1 * (1 + 1e-12), k2 * (1 + 1e-12)
    for k in range(T):
        state.k = k
        averages.add(state, schedule.tau_at(k) if config.diagnostic else None)
        if averages.count in checkpoints:
            bad = sets.contains(state)
            if bad:
                raise ContractError(f"iterate infeasible at step {k}: {bad}")
            if checkpoint_fn is not None:
                for name, value in checkpoint_fn(averages.count, averages, state).items():
                    trace.add(averages.count, name, value)
        s, a, s_next, r = env.next(k)
        sh, ah = uni.next()
        gamma = steps.gamma0 / math.sqrt(k + 1 + steps.offset)
        if record is not None:
            record.append((state.copy(), (s, a, s_next, r), (sh, ah), gamma))
        if check_bounds:
            g_p, g_d = stochastic_gradient_norms(state, (s, a, s_next, r), (sh, ah), eta, alpha)
            if g_p > stats.max_primal_grad:
                stats.max_primal_grad = g_p
            if g_d > stats.max_dual_grad:
                stats.max_dual_grad = g_d
            if g_p > k1_tol:
                stats.primal_violations += 1
            if g_d > k2_tol:
                stats.dual_violations += 1

        mu_sa = float(mu[s, a])
        lam_h = float(lam[sh, ah])
        q_sa = float(q[s, a])
        q_h = float(q[sh, ah])
        v_h = float(v[sh])
        v_next = float(v[s_next])
        # dual updates read the pre-update primal values
        new_lam = lam_h + gamma * sa * (q_h - v_h)
        new_mu = mu_sa + gamma * (alpha * v_next + r - q_sa)
        q[s, a] = q_sa + gamma * mu_sa
        q[sh, ah] = q[sh, ah] - gamma * sa * lam_h
        v[sh] = v_h - gamma * (n_states * eta_l[sh] - sa * lam_h)
        v[s_next] = v[s_next] - gamma * alpha * mu_sa
        for ss, aa in ((s, a), (sh, ah)):
            x = q[ss, aa]
            q[ss, aa] = 0.0 if x < 0.0 else (v_cap if x > v_cap else x)
        for ss in (sh, s_next):
            x = v[ss]
            v[ss] = 0.0 if x < 0.0 else (v_cap if x > v_cap else x)
        lam[sh, ah] = new_lam
        if not (0.0 <= new_lam <= lam_cap and lam[sh].sum() >= eta_l[sh]):
            lam[sh] = project_lambda(lam[sh], eta_l[sh], lam_cap)
        mu[s, a] = 0.0 if new_mu < 0.0 else (mu_cap if new_mu > mu_cap else new_mu)

    state.k = T
    if stats.primal_violations or stats.dual_violations:
        msg = (f"gradient bound violated: primal {stats.primal_violations} (max {stats.max_primal_grad:.4g} "
               f"> K1 {k1:.4g}), dual {stats.dual_violations} (max {stats.max_dual_grad:.4g} > K2 {k2:.4g})")
        raise InternalConsistencyError(msg)
    stats.extra["final_state"] = state
    return averages, trace, stats


def sample_complexity_bound(epsilon, delta, n_states, n_actions, zeta, alpha, sigma, gamma0, beta0,
                            mode: str = "gap") -> float:
    """Un-rounded iteration bound for a gap (``mode='gap'``) or policy (``'policy'``) guarantee."""
    if not 0 < epsilon < 1:
        raise InvalidArgument("epsilon must lie in (0, 1)")
    if not 0 < delta < 1 / math.e:
        raise InvalidArgument("delta must lie in (0, 1/e)")
    if mode not in ("gap", "policy"):
        raise InvalidArgument(f"unknown mode {mode!r}")
    kappa = max(kappa1(n_states, n_actions, zeta, gamma0, beta0), kappa2(gamma0))
    s_pow, a_pow, one_minus_pow = (4, 4, 4) if mode == "gap" else (6, 4, 6)
    scale = sigma**2 * n_states**s_pow * n_actions**a_pow / (zeta**4 * (1 - alpha) ** one_minus_pow)
    return kappa * scale / epsilon**2 * math.log(1 / delta)


def sample_complexity(epsilon, delta, n_states, n_actions, zeta, alpha, sigma, gamma0, beta0,
                      mode: str = "gap") -> int:
    return math.ceil(sample_complexity_bound(epsilon, delta, n_states, n_actions, zeta, alpha, sigma,
                                             gamma0, beta0, mode))


def kappa1(n_states, n_actions, zeta, gamma0, beta0) -> float:
    return ((12 + 4 * beta0) / (zeta**2 * n_states**2 * n_actions**2 * gamma0) + 26 * gamma0) ** 2


def kappa2(gamma0) -> float:
    r = math.sqrt(26)
    return (2184 + 416 * r) * gamma0**2 + (1066 + 416 * r) * gamma0 + 832 + 16 * r
