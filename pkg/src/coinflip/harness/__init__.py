"""Experiment runner: configs, drivers and the command-line entry point."""

from coinflip.harness.config import ExperimentConfig, config_from_dict, default_config, load_config
from coinflip.harness.runs import (
    ablation_run,
    bonus_accuracy_run,
    linear_check,
    noise_sweep,
    rl_run,
    run_experiment,
    validate_estimator,
)

__all__ = [
    "ExperimentConfig",
    "ablation_run",
    "bonus_accuracy_run",
    "config_from_dict",
    "default_config",
    "linear_check",
    "load_config",
    "noise_sweep",
    "rl_run",
    "run_experiment",
    "validate_estimator",
]
