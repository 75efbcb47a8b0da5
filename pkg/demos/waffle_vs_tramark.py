"""
Ownership is not traceability
=============================

A single shared watermark (the Waffle-style baseline) proves that a model
came from the federation, but every client holds the same model, so a leak
cannot be pinned on anyone. Per-client watermarks fix that.
"""
from tramark import ExperimentConfig, run_experiment, verify

config = ExperimentConfig(seed=1)

for mode in ("waffle", "tramark"):
    res = run_experiment(config, mode)
    spec, wm0 = res.data.spec, res.data.wm_sets[0]
    owned = verify.ownership_verify(spec, res.models[0], wm0.holdout_triggers,
                                    wm0.target_label, config.nu)
    kl = verify.collision_report(spec, res.models, res.data.wm_sets, config.sigma)
    print(f"{mode:8s} ownership={owned} VR={res.final.vr:.2f} "
          f"colliding pairs={len(kl.colliding_pairs)} of 45")
