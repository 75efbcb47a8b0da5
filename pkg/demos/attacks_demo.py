"""
Can a leaker scrub the watermark?
=================================

Prune, quantize and fine-tune every client's model, then re-run leaker
verification. The watermark outlives the main task: heavy pruning ruins
the model long before the leaker stops being traceable.
"""
import numpy as np

from tramark import ExperimentConfig, attacks, nn, run_experiment, verify

res = run_experiment(ExperimentConfig(seed=2), "tramark")
spec, wm_sets, test, shards = res.data.spec, res.data.wm_sets, res.data.test, res.data.shards


def summary(name, models):
    ma = np.mean([nn.accuracy(spec, m, test.inputs, test.labels) for m in models])
    vr = verify.verification_rate(spec, models, wm_sets)
    print(f"{name:14s} MA={ma:.3f} VR={vr:.2f}")


summary("no attack", res.models)
for ratio in (0.3, 0.5, 0.7, 0.9, 0.99):
    summary(f"prune {ratio}", [attacks.prune(m, ratio) for m in res.models])
for bits in (attacks.FP16_EQUIVALENT_BITS, 8):
    summary(f"quantize {bits}b", [attacks.quantize(m, bits) for m in res.models])

# each client fine-tunes on its own shard for 30 epochs
tuned = [attacks.finetune(spec, m, shards[i], 30, 0.01, 32, np.random.default_rng(i))
         for i, m in enumerate(res.models)]
summary("finetune 30ep", tuned)
