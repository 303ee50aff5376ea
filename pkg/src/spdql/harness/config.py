"""Experiment configuration: schema, validation and model/schedule construction.

A config is a YAML (or JSON) mapping::

    model:                       # exactly one of builtin / file / inline
      builtin: grid_world        # two_state_mdp | grid_world
      width: 2
      height: 2
    schedule:                    # optional
      behavior: uniform          # uniform | default | (S, A) matrix
      v0: stationary             # stationary | uniform | vector
      first_step: 0              # first step used when estimating zeta
    algorithms: [spdq, qlearning]
    run:
      T: 5000
      gamma0: 2.0                # scalar or list (one sweep entry per value)
      step_offset: 9999          # gamma_k = gamma0 / sqrt(k + 1 + step_offset)
      eta: null                  # scalar fill or vector; default sigma / S
      zeta: null                 # default: computed from the schedule
      checkpoints_per_decade: 4
      diagnostic: true
      sampling: trajectory       # trajectory | iid
    seeds: [0, 1, 2]             # or {count: 10, start: 0}
    metrics: [avg_reward]
    output: results/grid
    options:                     # optional
      policy_norm: inf           # inf | 2
      avg_reward_window: 8
      start_state: 0

Inline models and model files use the MDP schema of
:func:`spdql.mdp.mdp_from_dict`.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from ..errors import ConfigError, InvalidArgument
from ..mdp import MdpModel, StochasticPolicy, grid_world, mdp_from_dict, transition_matrix_under_policy, two_state_mdp
from ..schedule import DistributionSchedule, stationary_distribution, two_state_schedule
from ..spdq import RunConfig
from .metrics import MetricKind

ALGORITHMS = ("spdq", "qlearning", "spdrl_corrected", "deterministic_pd")
BUILTINS = ("two_state_mdp", "grid_world")
RUN_KEYS = {"T", "gamma0", "step_offset", "eta", "zeta", "checkpoints_per_decade", "diagnostic", "sampling",
            "run_index"}


@dataclass
class ExperimentConfig:
    model: dict
    schedule: dict
    algorithms: list
    run: dict
    seeds: list
    metrics: list
    output: str
    options: dict = field(default_factory=dict)
    base_dir: str = "."

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "schedule": self.schedule,
            "algorithms": self.algorithms,
            "run": self.run,
            "seeds": self.seeds,
            "metrics": self.metrics,
            "output": self.output,
            "options": self.options,
        }

    @property
    def gamma0_values(self) -> list:
        g = self.run.get("gamma0", 1.0)
        return [float(x) for x in (g if isinstance(g, list) else [g])]

    def config_hash(self) -> str:
        text = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def run_config(self, gamma0: float, seed: int) -> RunConfig:
        r = self.run
        return RunConfig(
            T=int(r["T"]),
            gamma0=float(gamma0),
            eta=r.get("eta"),
            zeta=r.get("zeta"),
            seed=int(seed),
            run_index=int(r.get("run_index", 0)),
            checkpoints_per_decade=int(r.get("checkpoints_per_decade", 4)),
            diagnostic=bool(r.get("diagnostic", False)),
            sampling=r.get("sampling", "trajectory"),
            step_offset=float(r.get("step_offset", 0.0)),
        )


def _require(cond, message, field_name):
    if not cond:
        raise ConfigError(message, field=field_name)


def _mapping(data, name):
    value = data.get(name, {})
    _require(isinstance(value, dict), "must be a mapping", name)
    return dict(value)


def _parse_seeds(raw):
    if isinstance(raw, dict):
        _require("count" in raw, "needs 'count'", "seeds")
        start = int(raw.get("start", 0))
        raw = list(range(start, start + int(raw["count"])))
    elif isinstance(raw, int) and not isinstance(raw, bool):
        raw = [raw]
    _require(isinstance(raw, list) and raw, "at least one seed is required", "seeds")
    _require(all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in raw),
             "seeds must be non-negative integers", "seeds")
    _require(len(set(raw)) == len(raw), "seeds must be distinct", "seeds")
    return list(raw)


def _parse_model(section, base_dir):
    keys = [k for k in ("builtin", "file", "inline") if k in section]
    _require(len(keys) == 1, "give exactly one of builtin, file, inline", "model")
    if "builtin" in section:
        _require(section["builtin"] in BUILTINS, f"unknown builtin {section['builtin']!r}; expected one of {BUILTINS}",
                 "model.builtin")
        if section["builtin"] == "grid_world":
            for dim in ("width", "height"):
                value = section.setdefault(dim, 2)
                _require(isinstance(value, int) and value >= 1, "must be a positive integer", f"model.{dim}")
    if "file" in section:
        path = section["file"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        _require(os.path.isfile(path), f"file {section['file']!r} does not exist", "model.file")
    if "inline" in section:
        _require(isinstance(section["inline"], dict), "must be an MDP mapping", "model.inline")
    return section


def parse_config(data, base_dir: str = ".") -> ExperimentConfig:
    """Validate a config mapping; raises :class:`ConfigError` naming the field."""
    _require(isinstance(data, dict), "config must be a mapping", "<root>")
    data = copy.deepcopy(data)
    unknown = set(data) - {"model", "schedule", "algorithms", "algorithm", "run", "seeds", "metrics", "output",
                           "options"}
    _require(not unknown, f"unknown keys {sorted(unknown)}", "<root>")
    _require("model" in data, "missing", "model")
    model = _parse_model(_mapping(data, "model"), base_dir)
    schedule = _mapping(data, "schedule")

    algs = data.get("algorithms", data.get("algorithm", ["spdq"]))
    if isinstance(algs, str):
        algs = [algs]
    _require(isinstance(algs, list) and algs, "at least one algorithm is required", "algorithms")
    for a in algs:
        _require(a in ALGORITHMS, f"unknown algorithm {a!r}; expected one of {ALGORITHMS}", "algorithms")

    run = _mapping(data, "run")
    extra = set(run) - RUN_KEYS
    _require(not extra, f"unknown keys {sorted(extra)}", "run")
    _require("T" in run, "missing", "run.T")
    _require(isinstance(run["T"], int) and run["T"] >= 1, "must be a positive integer", "run.T")
    gammas = run.get("gamma0", 1.0)
    for g in gammas if isinstance(gammas, list) else [gammas]:
        _require(isinstance(g, (int, float)) and g > 0, "step sizes must be positive numbers", "run.gamma0")
    _require(run.get("sampling", "trajectory") in ("trajectory", "iid"), "must be trajectory or iid",
             "run.sampling")
    _require(float(run.get("step_offset", 0)) >= 0, "must be non-negative", "run.step_offset")
    if run.get("zeta") is not None:
        _require(float(run["zeta"]) > 0, "must be positive", "run.zeta")
    if run.get("eta") is not None:
        _require(np.all(np.asarray(run["eta"], dtype=float) > 0), "entries must be positive", "run.eta")

    seeds = _parse_seeds(data.get("seeds", [0]))
    metrics = data.get("metrics", [])
    _require(isinstance(metrics, list) and metrics, "at least one metric is required", "metrics")
    names = [m.value for m in MetricKind]
    for m in metrics:
        _require(m in names, f"unknown metric {m!r}; expected one of {names}", "metrics")
    if "duality_gap" in metrics:
        _require(run.get("diagnostic", False), "duality_gap requires run.diagnostic: true", "metrics")

    options = _mapping(data, "options")
    _require(str(options.get("policy_norm", "inf")) in ("inf", "2"), "must be inf or 2", "options.policy_norm")
    options["policy_norm"] = str(options.get("policy_norm", "inf"))
    _require(int(options.get("avg_reward_window", 8)) >= 1, "must be >= 1", "options.avg_reward_window")
    output = data.get("output", "results")
    _require(isinstance(output, str) and output, "must be a path", "output")
    return ExperimentConfig(model, schedule, list(algs), run, seeds, list(metrics), output, options, base_dir)


def load_config(path) -> ExperimentConfig:
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ConfigError(f"config file {path!r} does not exist")
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
            raise ConfigError(f"cannot parse {path}{where}: {exc}") from exc
    return parse_config(data, base_dir=os.path.dirname(os.path.abspath(path)))


def build_model(cfg: ExperimentConfig) -> MdpModel:
    section = cfg.model
    try:
        if section.get("builtin") == "two_state_mdp":
            return two_state_mdp()
        if section.get("builtin") == "grid_world":
            return grid_world(section["width"], section["height"])
        if "file" in section:
            path = section["file"] if os.path.isabs(section["file"]) else os.path.join(cfg.base_dir, section["file"])
            with open(path) as fh:
                return mdp_from_dict(yaml.safe_load(fh), name=os.path.basename(path))
        return mdp_from_dict(section["inline"], name="inline")
    except InvalidArgument as exc:
        raise ConfigError(str(exc), field="model") from exc


def build_schedule(cfg: ExperimentConfig, model: MdpModel) -> DistributionSchedule:
    """Behaviour-policy schedule; the two-state builtin defaults to its reference policy."""
    section = cfg.schedule
    behavior = section.get("behavior", "default")
    first_step = int(section.get("first_step", 0))
    zeta = section.get("zeta")
    try:
        if behavior == "default" and cfg.model.get("builtin") == "two_state_mdp" and "v0" not in section:
            return two_state_schedule(model, zeta=zeta, first_step=first_step)
        if behavior in ("default", "uniform"):
            theta = StochasticPolicy.uniform(model.n_states, model.n_actions).probs
        else:
            theta = StochasticPolicy(np.asarray(behavior, dtype=float)).probs
        v0 = section.get("v0", "stationary")
        if v0 == "stationary":
            v0 = stationary_distribution(transition_matrix_under_policy(model, theta))
        elif v0 == "uniform":
            v0 = np.full(model.n_states, 1.0 / model.n_states)
        return DistributionSchedule(model, theta, np.asarray(v0, dtype=float), zeta=zeta, first_step=first_step)
    except InvalidArgument as exc:
        raise ConfigError(str(exc), field="schedule") from exc
