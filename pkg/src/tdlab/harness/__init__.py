"""Experiment orchestration: configs, runs, sweeps, reports and the verification suite."""

from .config import EXPERIMENTS, ConfigError, RunConfig, load_config
from .runner import OUT_ENV, run

__all__ = ["EXPERIMENTS", "ConfigError", "RunConfig", "load_config", "OUT_ENV", "run"]
