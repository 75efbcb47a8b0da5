"""
Hyperparameters that matter
===========================

A tiny watermark region, a small trigger set or a long warmup all leave less
room for the watermark. Same as ``tramark sweep`` but in one script.
"""
import numpy as np

from tramark import ExperimentConfig, run_experiment

base = ExperimentConfig()
for key, values in (("k", (0.001, 0.01, 0.05)), ("wm_size", (20, 50, 100)),
                    ("alpha", (0.5, 0.7, 0.9))):
    for v in values:
        vrs = [run_experiment(base.with_(**{key: v}, seed=s)).final.vr for s in (0, 1, 2)]
        print(f"{key:8s}={v:<6} VR per seed {vrs} mean {np.mean(vrs):.2f}")
