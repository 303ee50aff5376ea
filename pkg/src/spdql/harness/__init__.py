"""Experiment harness: configs, metrics, seed sweeps, golden regression and CLI."""

from .config import ExperimentConfig, load_config, parse_config
from .golden import golden_regression, golden_snapshot
from .metrics import MetricKind, compute_metric
from .runner import run_experiment

__all__ = [
    "ExperimentConfig",
    "MetricKind",
    "compute_metric",
    "golden_regression",
    "golden_snapshot",
    "load_config",
    "parse_config",
    "run_experiment",
]
