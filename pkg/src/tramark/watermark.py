"""Region partitioning, masked aggregation and region-constrained injection."""
from dataclasses import dataclass

import numpy as np

from . import nn


@dataclass(frozen=True)
class RegionMasks:
    wm_mask: np.ndarray  # uint8, 1 = watermark region
    ratio: float

    @property
    def main_mask(self):
        return (1 - self.wm_mask).astype(np.uint8)

    @property
    def d(self):
        return self.wm_mask.shape[0]

    @property
    def wm_count(self):
        return int(self.wm_mask.sum())


def smallest_magnitude(values, count):
    """Indicator of the ``count`` entries with smallest ``|values|``.

    Ties at the threshold go to lower indices first. Avoids a full sort.
    """
    d = values.shape[0]
    sel = np.zeros(d, dtype=bool)
    if count <= 0:
        return sel
    if count >= d:
        sel[:] = True
        return sel
    mag = np.abs(values)
    thr = np.partition(mag, count - 1)[count - 1]
    below = mag < thr
    sel |= below
    remaining = count - int(below.sum())
    at = np.flatnonzero(mag == thr)
    sel[at[:remaining]] = True
    return sel


def partition_masks(global_model, k):
    if not 0 < k < 1:
        raise ValueError(f"partition ratio must lie in (0, 1), got {k}")
    d = global_model.shape[0]
    count = int(round(k * d))
    if count == 0:
        raise ValueError(f"k={k} leaves an empty watermark region for d={d}")
    wm = smallest_magnitude(global_model, count).astype(np.uint8)
    return RegionMasks(wm, float(k))


def _local_models(models, updates):
    if len(models) != len(updates) or not models:
        raise nn.DimensionError("need one update per model and at least one model")
    d = models[0].shape[0]
    for m, u in zip(models, updates):
        if m.shape != (d,) or u.shape != (d,):
            raise nn.DimensionError("parameter vectors differ in length")
    return [m + u for m, u in zip(models, updates)]


def mean_of(vectors):
    """Elementwise mean, summed in list order in float64."""
    acc = np.zeros(vectors[0].shape[0], dtype=np.float64)
    for v in vectors:
        acc += v
    return (acc / len(vectors)).astype(np.float32)


def fedavg_aggregate(models, updates):
    return mean_of(_local_models(models, updates))


def masked_aggregate(models, updates, masks, participants=None):
    """Personalized models: shared mean on the main region, own weights on the
    watermark region.

    ``participants`` restricts the main-region mean to the sampled clients;
    every client still gets a personalized model.
    """
    local = _local_models(models, updates)
    if masks.d != local[0].shape[0]:
        raise nn.DimensionError(f"mask covers {masks.d} parameters, models have {local[0].shape[0]}")
    pool = local if participants is None else [local[i] for i in participants]
    shared = mean_of(pool)
    wm = masks.wm_mask.astype(bool)
    out = []
    for own in local:
        theta = shared.copy()
        theta[wm] = own[wm]
        out.append(theta)
    return out


def _train_on_triggers(spec, model, triggers, label, eta_w, iters, mask):
    if iters <= 0 or eta_w == 0:
        return model.copy()
    labels = np.full(triggers.shape[0], label, dtype=np.int64)
    theta = model.copy()
    for _ in range(iters):
        _, g = nn.loss_and_gradient(spec, theta, triggers, labels)
        theta = nn.sgd_step(theta, g, eta_w, mask)
    return theta


def inject_watermark(spec, model, wm, masks, eta_w, tau_w, rng=None):
    """``tau_w`` full-batch steps on ``wm.triggers``, updating only the watermark region.

    ``rng`` is accepted for a uniform call signature; full-batch steps draw nothing.
    """
    if wm.size == 0:
        raise ValueError("empty watermark dataset")
    return _train_on_triggers(spec, model, wm.triggers, wm.target_label, eta_w, tau_w, masks.wm_mask)


def waffle_inject(spec, global_model, shared_wm, eta_w, iters, rng=None):
    """Retrain the whole model on one shared trigger set (non-traceable baseline)."""
    return _train_on_triggers(spec, global_model, shared_wm.triggers, shared_wm.target_label,
                              eta_w, iters, None)
