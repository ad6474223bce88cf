"""Experiment harness: config files, trace/report serialization, seed sweeps,
the bound-verification suite, and the command-line interface."""

from .config import AnalysisOptions, ConfigError, ExperimentConfig, load_config, parse_config
from .io import SCHEMA_VERSION, fmt_value, read_report, read_trace, write_report, write_trace
from .runner import ExperimentResult, SeedOutcome, run_experiment
from .verify import CheckResult, run_suite, suite_names

__all__ = [
    "AnalysisOptions",
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "SCHEMA_VERSION",
    "fmt_value",
    "read_report",
    "read_trace",
    "write_report",
    "write_trace",
    "ExperimentResult",
    "SeedOutcome",
    "run_experiment",
    "CheckResult",
    "run_suite",
    "suite_names",
]
