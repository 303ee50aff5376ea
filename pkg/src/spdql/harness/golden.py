"""Solution snapshots and the regression check against the stored two-state constants."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ..mdp import two_state_mdp
from ..oracle import SaddleProblem, solve_optimal
from ..schedule import two_state_schedule

GOLDEN_RESOURCE = "two_state_golden.json"
GOLDEN_ETA = 0.1


def solution_snapshot(model, schedule, eta) -> dict:
    """Exact solution and schedule limits as plain lists, keyed per action (1-based)."""
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (model.n_states,))
    m_inf = schedule.m_infinity
    problem = SaddleProblem(model, eta, m_inf, min(schedule.zeta, float(m_inf.min())))
    sol = solve_optimal(problem)
    snap = {"v_star": sol.v_star.tolist()}
    for a in range(model.n_actions):
        snap[f"q_star_{a + 1}"] = sol.q_star[:, a].tolist()
    for a in range(model.n_actions):
        snap[f"lambda_star_{a + 1}"] = sol.lambda_star[:, a].tolist()
    for a in range(model.n_actions):
        snap[f"mu_star_{a + 1}"] = sol.mu_star_scaled[:, a].tolist()
    snap["p_theta"] = schedule.p_beta.tolist()
    snap["v_infinity"] = schedule.v_infinity.tolist()
    snap["m_infinity_diag"] = m_inf.T.ravel().tolist()
    snap["zeta"] = float(schedule.zeta)
    snap["pi_star"] = sol.pi_star.action_of.tolist()
    return snap


def golden_snapshot() -> dict:
    """Snapshot of the two-state benchmark with ``eta = 0.1`` and the floor taken from step 1 on."""
    model = two_state_mdp()
    return solution_snapshot(model, two_state_schedule(model, first_step=1), GOLDEN_ETA)


def load_golden(path=None) -> dict:
    if path is None:
        text = resources.files("spdql.data").joinpath(GOLDEN_RESOURCE).read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return json.loads(text)


@dataclass
class GoldenReport:
    tol: float
    deltas: dict = field(default_factory=dict)

    @property
    def failures(self) -> list:
        return [name for name, d in self.deltas.items() if not d <= self.tol]

    @property
    def passed(self) -> bool:
        return not self.failures

    def format(self) -> str:
        lines = [f"{'ok  ' if d <= self.tol else 'FAIL'} {name:16s} max|delta| = {d:.3e}"
                 for name, d in self.deltas.items()]
        lines.append(f"{'PASS' if self.passed else 'FAIL'} at tolerance {self.tol:g}")
        return "\n".join(lines)


def golden_regression(tol: float = 1e-3, golden=None) -> GoldenReport:
    """Compare :func:`golden_snapshot` with the stored constants entry by entry.

    ``golden`` may be a mapping or a path; by default the packaged file is used.
    """
    expected = golden if isinstance(golden, dict) else load_golden(golden)
    actual = golden_snapshot()
    report = GoldenReport(tol)
    for name, want in expected.items():
        if name not in actual:
            report.deltas[name] = float("inf")
            continue
        got = np.asarray(actual[name], dtype=float)
        want = np.asarray(want, dtype=float)
        report.deltas[name] = float(np.max(np.abs(got - want))) if got.shape == want.shape else float("inf")
    return report
