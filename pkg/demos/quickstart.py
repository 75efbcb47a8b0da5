"""
Tracing a leaked model back to its client
==========================================

Ten clients train a small MLP together. After a FedAvg warmup the server
gives every client its own watermark, hidden in the 1% of parameters with
the smallest magnitude. A model that later shows up in the wild can be
attributed to the client that received it.
"""
import numpy as np

from tramark import ExperimentConfig, nn, run_experiment, verify

config = ExperimentConfig(seed=0)
result = run_experiment(config, "tramark")
spec, wm_sets = result.data.spec, result.data.wm_sets

# one row per round; the first round(alpha * T) are plain FedAvg
for m in result.metrics[::5] + [result.final]:
    print(f"round {m.round:2d} {m.phase:8s} ma={m.ma:.3f} vr={m.vr:.2f} "
          f"interval={m.interval:.3f}")

print("watermark region:", result.masks.wm_count, "of", spec.n_params, "parameters")

# pretend client 7 leaked its copy; the server tests it against every trigger set
x = np.concatenate([w.holdout_triggers for w in wm_sets])
y = np.concatenate([w.holdout_labels() for w in wm_sets])
suspect = result.models[7]
report = verify.verify_leaker(spec, suspect, assigned_label=7, inputs=x, labels=y)
print("per-label accuracy:", np.round(report.per_label_accuracy, 2))
print("attributed to label", report.predicted_owner_label, "verified:", report.verified)

# the main task does not notice the watermarks
fedavg = run_experiment(config, "fedavg")
test = result.data.test
print("MA tramark %.3f  fedavg %.3f" % (
    nn.accuracy(spec, suspect, test.inputs, test.labels), fedavg.final.ma))
