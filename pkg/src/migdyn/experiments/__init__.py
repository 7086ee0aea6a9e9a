"""Experiment configuration, registry and runner."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .registry import get, names, registry
from .runner import RunSummary, StageError, build_spec, conditions, run
from .waves import discretize_waves, neumann_laplacian

__all__ = [
    "ConfigError", "ExperimentConfig", "RunSummary", "StageError", "build_spec", "conditions",
    "discretize_waves", "get", "load_config", "names", "neumann_laplacian",
    "parse_config", "registry", "run",
]
