"""Command line entry point.

Exit codes: 0 success, 1 configuration error, 2 numerical or consistency failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from ..errors import ConfigError, InvalidArgument, NumericalError
from ..schedule import verify_mixing_bounds
from ..spdq import sample_complexity
from .config import build_model, build_schedule, load_config, parse_config
from .golden import golden_regression, solution_snapshot
from .runner import run_experiment


def _cmd_run(args):
    cfg = load_config(args.config)
    paths = run_experiment(cfg, output_dir=args.output, workers=args.workers)
    for p in paths:
        print(p)


def _cmd_oracle(args):
    cfg = load_config(args.config)
    model = build_model(cfg)
    schedule = build_schedule(cfg, model)
    eta = cfg.run_config(cfg.gamma0_values[0], cfg.seeds[0]).eta_vector(model.n_states, model.sigma)
    print(json.dumps(solution_snapshot(model, schedule, eta), indent=2))


def _cmd_golden(args):
    report = golden_regression(tol=args.tol, golden=args.file)
    print(report.format())
    return 0 if report.passed else 2


def _cmd_complexity(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = parse_config({"model": {"builtin": "two_state_mdp"}, "run": {"T": 1}, "metrics": ["q_error"]})
    model = build_model(cfg)
    schedule = build_schedule(cfg, model)
    zeta = args.zeta if args.zeta is not None else schedule.zeta
    beta0 = args.beta0 if args.beta0 is not None else verify_mixing_bounds(schedule).beta0
    common = dict(epsilon=args.epsilon, delta=args.delta, n_states=model.n_states, n_actions=model.n_actions,
                  zeta=zeta, alpha=model.discount, sigma=model.sigma, gamma0=args.gamma0, beta0=beta0)
    try:
        gap = sample_complexity(**common, mode="gap")
        policy = sample_complexity(**common, mode="policy")
    except InvalidArgument as exc:
        raise ConfigError(str(exc)) from exc
    print(json.dumps({"model": model.name, "zeta": zeta, "beta0": beta0, "gamma0": args.gamma0,
                      "T_gap": gap, "T_policy": policy}, indent=2))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spdql", description="Stochastic primal-dual Q-learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config and write CSV traces")
    p.add_argument("config")
    p.add_argument("--output", help="override the config's output directory")
    p.add_argument("--workers", type=int, help="worker processes (default: $SPDQL_WORKERS or 1)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("oracle", help="print the exact solution snapshot for a config's model")
    p.add_argument("config")
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("golden", help="check the two-state constants against the stored golden file")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--file", help="alternative golden JSON file")
    p.set_defaults(func=_cmd_golden)

    p = sub.add_parser("complexity", help="print the iteration bounds for a gap or policy guarantee")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--config", help="experiment config supplying the model (default: two-state benchmark)")
    p.add_argument("--gamma0", type=float, default=1.0)
    p.add_argument("--zeta", type=float)
    p.add_argument("--beta0", type=float)
    p.set_defaults(func=_cmd_complexity)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        code = args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())
