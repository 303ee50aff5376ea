"""Seed and step-size sweeps with one CSV per ``(algorithm, gamma0, seed)``."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

from .. import __version__
from ..baselines import Estimates, deterministic_pd_run, q_learning_run, spd_rl_corrected_run
from ..errors import ConfigError
from ..oracle import SaddleProblem, solve_optimal
from ..sampling import run_generators
from ..spdq import run as spdq_run
from .config import ExperimentConfig, build_model, build_schedule, parse_config
from .metrics import MetricKind, available, compute_metric

WORKERS_ENV = "SPDQL_WORKERS"


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def output_name(algorithm: str, gamma0: float, seed: int) -> str:
    return f"{algorithm}_g{gamma0:g}_s{seed}.csv"


def _estimates(obj) -> Estimates:
    if isinstance(obj, Estimates):
        return obj
    return Estimates(obj.q_bar, obj.v_bar, obj.lam_bar, obj.mu_bar_weighted)


def execute_run(cfg: ExperimentConfig, algorithm: str, gamma0: float, seed: int):
    """Run one learner and return its :class:`~spdql.trace.RunTrace`."""
    model = build_model(cfg)
    schedule = build_schedule(cfg, model)
    run_cfg = cfg.run_config(gamma0, seed)
    eta = run_cfg.eta_vector(model.n_states, model.sigma)
    problem = SaddleProblem(model, eta, schedule.m_infinity, min(schedule.zeta, float(schedule.m_infinity.min())))
    oracle = solve_optimal(problem)
    eval_rng = run_generators(seed, run_cfg.run_index)["eval"]
    kinds = [MetricKind(m) for m in cfg.metrics]
    opts = cfg.options

    def checkpoint(t, source, _state):
        est = _estimates(source)
        out = {}
        for kind in kinds:
            if not available(kind, est):
                continue
            out[kind.value] = compute_metric(
                kind, est, oracle, model, problem=problem if run_cfg.diagnostic else None, rng=eval_rng,
                window_samples=int(opts.get("avg_reward_window", 8)),
                start_state=int(opts.get("start_state", 0)), policy_norm=opts.get("policy_norm", "inf"))
        return out

    if algorithm == "spdq":
        _, trace, _ = spdq_run(model, schedule, run_cfg, checkpoint_fn=checkpoint)
    elif algorithm == "qlearning":
        _, trace = q_learning_run(model, schedule, run_cfg, checkpoint_fn=checkpoint)
    elif algorithm == "spdrl_corrected":
        _, _, trace = spd_rl_corrected_run(model, schedule, run_cfg, checkpoint_fn=checkpoint)
    elif algorithm == "deterministic_pd":
        _, trace, _ = deterministic_pd_run(model, schedule, run_cfg, checkpoint_fn=checkpoint)
    else:
        raise ConfigError(f"unknown algorithm {algorithm!r}", field="algorithms")
    trace.metadata = {
        "config_hash": cfg.config_hash(),
        "version": f"spdql {__version__}",
        "model": model.name,
        "algorithm": algorithm,
        "gamma0": repr(float(gamma0)),
        "seed": seed,
        "T": run_cfg.T,
    }
    return trace


def _task(args):
    cfg_dict, base_dir, algorithm, gamma0, seed, path = args
    cfg = parse_config(cfg_dict, base_dir=base_dir)
    trace = execute_run(cfg, algorithm, gamma0, seed)
    trace.write_csv(path)
    return path


def run_experiment(cfg: ExperimentConfig, output_dir=None, workers: int | None = None) -> list:
    """Run every ``(algorithm, gamma0, seed)`` tuple and return the CSV paths.

    Each CSV is written atomically as soon as its run finishes, so an
    interrupted sweep leaves only complete files behind. ``workers``
    defaults to the ``SPDQL_WORKERS`` environment variable.
    """
    out_dir = output_dir or (cfg.output if os.path.isabs(cfg.output) else os.path.join(os.getcwd(), cfg.output))
    os.makedirs(out_dir, exist_ok=True)
    tasks = [(cfg.as_dict(), cfg.base_dir, alg, g, seed, os.path.join(out_dir, output_name(alg, g, seed)))
             for alg in cfg.algorithms for g in cfg.gamma0_values for seed in cfg.seeds]
    workers = worker_count() if workers is None else max(1, int(workers))
    if workers == 1:
        return [_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_task, t) for t in tasks]
        try:
            return [f.result() for f in futures]
        except BaseException:
            for f in futures:
                f.cancel()
            raise
