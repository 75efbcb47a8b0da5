"""Cached desk-scale runs shared by the end-to-end and acceptance tests."""
import functools

import numpy as np

from tramark.config import ExperimentConfig
from tramark.sim import run_experiment

SEEDS = (0, 1, 2)


def desk_config(seed=0, **overrides):
    return ExperimentConfig(seed=seed).with_(**overrides)


@functools.lru_cache(maxsize=None)
def _run(mode, seed, overrides):
    return run_experiment(desk_config(seed, **dict(overrides)), mode)


def desk_run(mode="tramark", seed=0, **overrides):
    return _run(mode, seed, tuple(sorted(overrides.items())))


def tiny_config(**overrides):
    """A few-second federation for property tests."""
    base = dict(n=4, T=6, alpha=0.5, classes=4, input_dim=16, hidden="8", per_class=20,
                test_per_class=10, wm_size=10, batch_size=8, margin=0, k=0.05)
    base.update(overrides)
    return ExperimentConfig(**base)


def fd_gradient(f, x, eps=1e-5):
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = eps
        g[j] = (f(x + e) - f(x - e)) / (2 * eps)
    return g
