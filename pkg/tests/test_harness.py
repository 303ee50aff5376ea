import json
import os

import numpy as np
import pytest
import yaml

from oracles import series_policy_value
from spdql.baselines import Estimates
from spdql.errors import ConfigError, NumericalError
from spdql.harness import compute_metric, golden_regression, golden_snapshot, load_config, parse_config, run_experiment
from spdql.harness.cli import main
from spdql.harness.config import build_model, build_schedule
from spdql.harness.golden import load_golden
from spdql.harness.metrics import MetricKind, policy_error, q_error
from spdql.harness.runner import execute_run, output_name, worker_count
from spdql.trace import RunTrace

BASE = {
    "model": {"builtin": "two_state_mdp"},
    "algorithms": ["spdq"],
    "run": {"T": 200, "eta": 1.5, "diagnostic": True},
    "seeds": [0],
    "metrics": ["q_error", "duality_gap"],
}


def with_(**changes):
    cfg = json.loads(json.dumps(BASE))
    for path, value in changes.items():
        node = cfg
        keys = path.split("__")
        for k in keys[:-1]:
            node = node[k]
        node[keys[-1]] = value
    return cfg


@pytest.mark.parametrize("changes, field", [
    ({"run__T": 0}, "run.T"),
    ({"run__T": "ten"}, "run.T"),
    ({"run__gamma0": -1}, "run.gamma0"),
    ({"run__sampling": "markov"}, "run.sampling"),
    ({"run__bogus": 1}, "run"),
    ({"algorithms": ["sarsa"]}, "algorithms"),
    ({"metrics": ["rmse"]}, "metrics"),
    ({"metrics": []}, "metrics"),
    ({"seeds": [1, 1]}, "seeds"),
    ({"seeds": [-1]}, "seeds"),
    ({"model": {"builtin": "maze"}}, "model.builtin"),
    ({"model": {"builtin": "grid_world", "width": 0}}, "model.width"),
    ({"model": {"file": "missing.yaml"}}, "model.file"),
    ({"options": {"policy_norm": "1"}}, "options.policy_norm"),
    ({"run__diagnostic": False}, "metrics"),
])
def test_config_errors_name_field(changes, field):
    with pytest.raises(ConfigError) as info:
        parse_config(with_(**changes))
    assert info.value.field == field
    assert str(info.value).startswith(field)


def test_config_roundtrip_and_hash():
    cfg = parse_config(BASE)
    again = parse_config(cfg.as_dict())
    assert again.config_hash() == cfg.config_hash()
    assert parse_config(with_(run__T=201)).config_hash() != cfg.config_hash()
    assert parse_config(with_(seeds={"count": 3, "start": 5})).seeds == [5, 6, 7]
    assert parse_config(with_(run__gamma0=[1, 2.5])).gamma0_values == [1.0, 2.5]


def test_load_config_reports_yaml_position(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("model:\n  builtin: [unclosed\n")
    with pytest.raises(ConfigError, match="line"):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")


def test_shipped_configs_parse():
    root = os.path.join(os.path.dirname(__file__), "..", "configs")
    names = sorted(f for f in os.listdir(root) if f.endswith(".yaml"))
    assert names
    for name in names:
        cfg = load_config(os.path.join(root, name))
        build_schedule(cfg, build_model(cfg))


def test_model_from_file(tmp_path):
    from spdql.mdp import mdp_to_dict, two_state_mdp
    (tmp_path / "m.yaml").write_text(yaml.safe_dump(mdp_to_dict(two_state_mdp())))
    cfg = parse_config(with_(model={"file": "m.yaml"}, schedule={"behavior": "uniform"}), base_dir=str(tmp_path))
    model = build_model(cfg)
    np.testing.assert_array_equal(model.transitions, two_state_mdp().transitions)


def test_smoke_csv(tmp_path):
    cfg = parse_config(with_(run__T=1000, metrics=["q_error", "dual_policy_error", "duality_gap"]))
    paths = run_experiment(cfg, output_dir=str(tmp_path), workers=1)
    assert [os.path.basename(p) for p in paths] == [output_name("spdq", 1.0, 0)]
    text = open(paths[0]).read()
    assert "# config_hash: " + cfg.config_hash() in text
    assert "k,metric,value" in text
    trace = RunTrace.from_csv(text)
    steps, _ = trace.series("q_error")
    assert steps[0] == 1 and steps[-1] == 1000
    assert set(trace.metrics()) == {"q_error", "dual_policy_error", "duality_gap"}
    assert trace.metadata["gamma0"] == "1.0"
    assert not [f for f in os.listdir(tmp_path) if f.startswith(".tmp")]


def test_trace_roundtrip():
    trace = RunTrace(metadata={"seed": 3})
    trace.add(1, "q_error", 0.1 + 0.2)
    trace.add(10, "q_error", 1e-17)
    back = RunTrace.from_csv(trace.to_csv())
    assert back.rows == trace.rows
    assert back.metadata == {"seed": "3"}


def test_nan_metric_raises():
    with pytest.raises(NumericalError):
        RunTrace().add(1, "q_error", float("nan"))


def test_serial_parallel_identical(tmp_path):
    cfg = parse_config(with_(algorithms=["spdq", "qlearning"], seeds=[0, 1], run__gamma0=[1, 2],
                             metrics=["q_error", "primal_policy_error"]))
    serial = run_experiment(cfg, output_dir=str(tmp_path / "a"), workers=1)
    parallel = run_experiment(cfg, output_dir=str(tmp_path / "b"), workers=3)
    assert len(serial) == 8
    for p, q in zip(serial, parallel):
        assert open(p).read() == open(q).read()


def test_worker_env(monkeypatch):
    monkeypatch.setenv("SPDQL_WORKERS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("SPDQL_WORKERS", "x")
    with pytest.raises(ConfigError):
        worker_count()


def test_metrics_skipped_for_qlearning():
    cfg = parse_config(with_(algorithms=["qlearning"], metrics=["q_error", "dual_policy_error", "duality_gap"]))
    trace = execute_run(cfg, "qlearning", 1.0, 0)
    assert trace.metrics() == ["q_error"]


def test_metric_values_at_solution(solution_run, problem_run, model):
    sol = solution_run
    est = Estimates(sol.q_star, sol.v_star, sol.lambda_star, problem_run.m * sol.mu_star)
    for kind in ("q_error", "dual_policy_error", "primal_policy_error", "value_suboptimality"):
        assert compute_metric(kind, est, sol, model) == pytest.approx(0.0, abs=1e-9)
    assert compute_metric("duality_gap", est, sol, model, problem=problem_run) == pytest.approx(0.0, abs=1e-6)


def test_metric_uniform_policy(solution_run, model):
    uniform = np.full((2, 2), 0.5)
    est = Estimates(lam=uniform)
    assert compute_metric("dual_policy_error", est, solution_run, model) == pytest.approx(1.0)
    assert compute_metric("dual_policy_error", est, solution_run, model, policy_norm="2") == pytest.approx(
        2 * np.sqrt(0.5))
    v_uniform = series_policy_value(model.transitions, model.expected_rewards, model.discount, uniform)
    expected = np.max(np.abs(solution_run.v_star - v_uniform))
    assert compute_metric("value_suboptimality", est, solution_run, model) == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(2.80024, abs=1e-4)


def test_metric_helpers():
    assert q_error(np.zeros((2, 2)), np.array([[1.0, -3.0], [2.0, 0.5]])) == 5.0
    assert policy_error(np.array([[1.0, 0.0], [0.0, 1.0]]), [0, 1]) == 0.0
    with pytest.raises(ConfigError):
        policy_error(np.eye(2), [0, 1], norm="1")


def test_metric_missing_inputs(solution_run, model):
    with pytest.raises(ConfigError):
        compute_metric(MetricKind.DUAL_POLICY_ERROR, Estimates(q=np.zeros((2, 2))), solution_run, model)
    with pytest.raises(ConfigError):
        compute_metric("duality_gap", Estimates(lam=np.ones((2, 2))), solution_run, model)
    with pytest.raises(ConfigError):
        compute_metric("avg_reward", Estimates(q=np.zeros((2, 2))), solution_run, model)


def test_avg_reward_optimal_grid():
    from spdql.mdp import grid_world
    from spdql.oracle import SaddleProblem, solve_optimal
    from spdql.schedule import uniform_schedule
    g = grid_world()
    sched = uniform_schedule(g)
    sol = solve_optimal(SaddleProblem(g, 0.3, sched.m_infinity, sched.zeta))
    rng = np.random.default_rng(0)
    vals = [compute_metric("avg_reward", Estimates(q=sol.q_star), sol, g, rng=rng, window_samples=200)
            for _ in range(20)]
    assert np.mean(vals) > 0.8


def test_oracle_snapshot_matches_golden():
    snap = golden_snapshot()
    gold = load_golden()
    for name, want in gold.items():
        np.testing.assert_allclose(snap[name], want, atol=1e-3, err_msg=name)


def test_golden_regression_report():
    report = golden_regression()
    assert report.passed and "PASS" in report.format()
    tight = golden_regression(tol=1e-6)
    assert not tight.passed
    assert golden_regression(tol=1e-6).failures == tight.failures
    assert "p_theta" not in tight.failures and "zeta" not in tight.failures


def test_golden_perturbed_entry_fails():
    gold = load_golden()
    gold["mu_star_2"] = [0.0, 6.3]
    report = golden_regression(golden=gold)
    assert report.failures == ["mu_star_2"]
    assert "FAIL mu_star_2" in report.format()


def test_cli_exit_codes(tmp_path, capsys):
    cfg_path = tmp_path / "c.yaml"
    cfg_path.write_text(yaml.safe_dump(with_(run__T=50, output=str(tmp_path / "out"))))
    assert main(["run", str(cfg_path)]) == 0
    assert os.path.exists(tmp_path / "out" / output_name("spdq", 1.0, 0))
    assert main(["oracle", str(cfg_path)]) == 0
    assert "v_star" in capsys.readouterr().out
    assert main(["golden"]) == 0
    assert main(["golden", "--tol", "1e-6"]) == 2
    assert main(["complexity", "--epsilon", "0.5", "--delta", "0.1"]) == 0
    capsys.readouterr()
    assert main(["run", str(tmp_path / "nope.yaml")]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump(with_(run__T=-3)))
    assert main(["run", str(bad)]) == 1
    assert "run.T" in capsys.readouterr().err
    assert main(["complexity", "--epsilon", "-1", "--delta", "0.1"]) == 1


def test_cli_complexity_output(capsys):
    assert main(["complexity", "--epsilon", "0.5", "--delta", "0.1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["T_policy"] >= out["T_gap"] > 0
    assert out["zeta"] == pytest.approx(0.08, abs=1e-3)
