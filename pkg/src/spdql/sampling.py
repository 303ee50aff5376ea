"""Sample sources for the learners.

Every source hands out ``(s, a, s_next, reward)`` tuples through ``next()``.
Random numbers are drawn in fixed-size blocks so a stream is a pure
function of its generator state.
"""

from __future__ import annotations

import bisect

import numpy as np

from .errors import InvalidArgument, StreamExhausted

BLOCK = 4096


def run_generators(seed: int, run_index: int = 0) -> dict:
    """Independent generators for one run.

    The ``SeedSequence`` is keyed by ``(seed, run_index)``; its four spawned
    children feed initialisation, environment samples, uniform coordinate
    samples and metric rollouts.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(run_index),))
    init, env, unif, evaluation = (np.random.default_rng(c) for c in ss.spawn(4))
    return {"init": init, "env": env, "uniform": unif, "eval": evaluation}


class _Uniforms:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.buf = []
        self.pos = 0

    def __call__(self) -> float:
        if self.pos >= len(self.buf):
            self.buf = self.rng.random(BLOCK).tolist()
            self.pos = 0
        u = self.buf[self.pos]
        self.pos += 1
        return u


def _cumulative(rows) -> list:
    out = []
    for row in rows:
        c = np.cumsum(row)
        c[-1] = 1.0
        out.append(c.tolist())
    return out


def _draw(cum: list, u: float) -> int:
    return min(bisect.bisect_right(cum, u), len(cum) - 1)


class _ModelDraws:
    def __init__(self, model, rng):
        self.n_states = model.n_states
        self.next_cum = [_cumulative(model.transitions[a]) for a in range(model.n_actions)]
        rw = model.rewards
        self.per_next = rw.lo.ndim == 3
        self.lo = rw.lo.tolist()
        self.width = (rw.hi - rw.lo).tolist()
        self.random_reward = rw.kind != "deterministic"
        self.u = _Uniforms(rng)

    def transition(self, s: int, a: int):
        s_next = _draw(self.next_cum[a][s], self.u())
        if self.per_next:
            lo, width = self.lo[s][a][s_next], self.width[s][a][s_next]
        else:
            lo, width = self.lo[s][a], self.width[s][a]
        r = lo + width * self.u() if self.random_reward else lo
        return s_next, r


class TrajectorySampler(_ModelDraws):
    """One continuous behaviour-policy trajectory started from ``v0``.

    The marginal law of ``(s_k, a_k)`` is exactly ``tau_k``.
    """

    def __init__(self, model, schedule, rng):
        if getattr(schedule, "behavior", None) is None:
            raise InvalidArgument("trajectory sampling needs a behaviour-policy schedule")
        super().__init__(model, rng)
        self.action_cum = _cumulative(schedule.behavior)
        self.state = _draw(_cumulative([schedule.v0])[0], self.u())

    def next(self, k: int):
        s = self.state
        a = _draw(self.action_cum[s], self.u())
        s_next, r = self.transition(s, a)
        self.state = s_next
        return s, a, s_next, r


class IidSampler(_ModelDraws):
    """Fresh ``(s_k, a_k) ~ tau_k`` every step."""

    def __init__(self, model, schedule, rng):
        super().__init__(model, rng)
        self.schedule = schedule
        self.n_actions = model.n_actions
        self._k = None
        self._cum = None

    def next(self, k: int):
        if k != self._k:
            # action-major flat index a * S + s
            self._cum = _cumulative([self.schedule.tau_at(k).T.ravel()])[0]
            self._k = k
        idx = _draw(self._cum, self.u())
        a, s = divmod(idx, self.n_states)
        s_next, r = self.transition(s, a)
        return s, a, s_next, r


class StreamSampler:
    """Wrap a caller-supplied iterable of ``(s, a, s_next, reward)`` tuples."""

    def __init__(self, stream):
        self._it = iter(stream)

    def next(self, k: int):
        try:
            s, a, s_next, r = next(self._it)
        except StopIteration:
            raise StreamExhausted(f"transition stream ended at step {k}") from None
        return int(s), int(a), int(s_next), float(r)


class UniformPairs:
    """Independent ``s_hat ~ U(S)``, ``a_hat ~ U(A)``."""

    def __init__(self, n_states: int, n_actions: int, rng):
        self.n_states = n_states
        self.n_actions = n_actions
        self.u = _Uniforms(rng)

    def next(self):
        s = min(int(self.u() * self.n_states), self.n_states - 1)
        a = min(int(self.u() * self.n_actions), self.n_actions - 1)
        return s, a


def make_env_sampler(mode: str, model, schedule, rng, stream=None):
    if stream is not None:
        return StreamSampler(stream)
    if mode == "trajectory":
        return TrajectorySampler(model, schedule, rng)
    if mode == "iid":
        return IidSampler(model, schedule, rng)
    raise InvalidArgument(f"unknown sampling mode {mode!r}")
