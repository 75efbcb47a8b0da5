"""Traceable black-box watermarks for federated learning.

Server-side pipeline: FedAvg warmup, magnitude-based split of the parameter
space into a shared main region and a small per-client watermark region,
masked aggregation, and region-constrained trigger training.
"""
from .config import ExperimentConfig, load_config, parse_config
from .nn import NetworkSpec
from .sim import run_experiment

__all__ = ["ExperimentConfig", "NetworkSpec", "load_config", "parse_config", "run_experiment"]
__version__ = "0.1.0"
