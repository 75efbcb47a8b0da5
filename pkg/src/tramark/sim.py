"""Federated training loop: FedAvg warmup followed by per-client watermarking."""
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import data, nn, verify
from .watermark import (RegionMasks, fedavg_aggregate, inject_watermark, masked_aggregate,
                        partition_masks, waffle_inject)

log = logging.getLogger(__name__)

MODES = ("fedavg", "waffle", "tramark")

# stream tags for per-(round, client) generators
LOCAL, INJECT, SAMPLING = 0, 1, 2


def client_rng(seed, round_, client, purpose=LOCAL):
    return np.random.default_rng([seed, round_, client, purpose])


@dataclass
class ClientState:
    id: int
    shard: data.LabeledDataset
    watermark: data.WatermarkDataset
    model: np.ndarray = None


@dataclass
class RoundMetrics:
    round: int
    ma: float
    vr: float
    confidence: float
    leakage: float
    interval: float
    min_kl: float
    phase: str = "warmup"

    def row(self):
        return asdict(self)


@dataclass
class ExperimentData:
    spec: nn.NetworkSpec
    train: data.LabeledDataset
    test: data.LabeledDataset
    plan: data.PartitionPlan
    wm_sets: list
    init_params: np.ndarray

    @property
    def shards(self):
        return self.plan.shards(self.train)


@dataclass
class ExperimentResult:
    config: object
    mode: str
    data: ExperimentData
    metrics: list
    models: list
    masks: RegionMasks = None
    mask_history: list = field(default_factory=list)
    global_history: list = field(default_factory=list)

    @property
    def final(self):
        return self.metrics[-1]


def build_data(config):
    spec = nn.NetworkSpec(config.layer_sizes)
    train = data.generate_synthetic(config.classes, config.per_class, config.input_dim,
                                    config.noise_std, seed=[config.seed, 11],
                                    template_seed=[config.seed, 10], margin=config.margin)
    test = data.generate_synthetic(config.classes, config.test_per_class, config.input_dim,
                                   config.noise_std, seed=[config.seed, 12],
                                   template_seed=[config.seed, 10], margin=config.margin)
    if config.partition == "dirichlet":
        plan = data.dirichlet_partition(train, config.n, config.gamma, [config.seed, 13])
    else:
        plan = data.iid_partition(train, config.n, [config.seed, 13])
    ood = None
    if config.wm_source == "ood_idx_dataset":
        ood = data.load_idx(config.ood_images, config.ood_labels)
    wm_sets = data.build_watermark_datasets(config.n, config.wm_size, config.input_dim,
                                            config.classes, [config.seed, 14],
                                            source=config.wm_source, ood=ood,
                                            jitter=config.wm_jitter, levels=config.wm_levels)
    init = spec.init_params(np.random.default_rng([config.seed, 15]))
    return ExperimentData(spec, train, test, plan, wm_sets, init)


def local_training(spec, model, shard, tau_l, eta_l, batch_size, rng):
    """Return the update ``theta_after - theta_before`` of ``tau_l`` SGD steps."""
    if len(shard) == 0:
        raise ValueError("empty client shard")
    if tau_l <= 0 or eta_l == 0:
        return np.zeros_like(model)
    bs = min(batch_size, len(shard))
    theta = model
    for _ in range(tau_l):
        if bs == len(shard):
            idx = np.arange(bs)
        else:
            idx = rng.choice(len(shard), size=bs, replace=False)
        _, g = nn.loss_and_gradient(spec, theta, shard.inputs[idx], shard.labels[idx])
        theta = nn.sgd_step(theta, g, eta_l)
    return theta - model


def _threads(config):
    if config.threads:
        return config.threads
    return max(1, int(os.environ.get("TRAMARK_THREADS", "1") or 1))


def _participants(config, t):
    n = config.n
    m = math.ceil(config.sampling_fraction * n)
    if m >= n:
        return list(range(n))
    rng = client_rng(config.seed, t, n, SAMPLING)
    return sorted(int(i) for i in rng.choice(n, size=m, replace=False))


def _unique_models(models):
    """Evaluate shared global models once."""
    return all(m is models[0] for m in models)


def evaluate_round(spec, models, wm_sets, test, t, phase):
    same = _unique_models(models)
    if same:
        ma = nn.accuracy(spec, models[0], test.inputs, test.labels)
    else:
        ma = float(np.mean([nn.accuracy(spec, m, test.inputs, test.labels) for m in models]))
    vr = verify.verification_rate(spec, models, wm_sets)
    conf, leak, interval = verify.confidence_and_leakage(spec, models, wm_sets)
    if same:
        min_kl = 0.0
    else:
        min_kl = verify.collision_report(spec, models, wm_sets, 0.0).min_offdiagonal()
    return RoundMetrics(t, ma, vr, conf, leak, interval, min_kl, phase)


def run_experiment(config, mode="tramark", prepared=None, record_globals=False):
    """Run ``config.T`` rounds; the first ``round(alpha * T)`` are plain FedAvg in every mode.

    Returns an :class:`ExperimentResult` with one :class:`RoundMetrics` per round.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    d = prepared or build_data(config)
    spec, shards, wm_sets = d.spec, d.shards, d.wm_sets
    n, warm = config.n, config.warmup_rounds
    pool = ThreadPoolExecutor(_threads(config)) if _threads(config) > 1 else None
    pmap = pool.map if pool else map

    theta0 = d.init_params
    models = [theta0] * n
    masks = None
    metrics, mask_history, global_history = [], [], []
    log.info("mode=%s n=%d T=%d warmup=%d d=%d", mode, n, config.T, warm, spec.n_params)

    try:
        for t in range(config.T):
            part = _participants(config, t)

            def train(i):
                if i not in part:
                    return np.zeros_like(models[i])
                return local_training(spec, models[i], shards[i], config.tau_l, config.eta_l,
                                      config.batch_size, client_rng(config.seed, t, i))

            updates = list(pmap(train, range(n)))

            if mode != "tramark" or t < warm:
                g = fedavg_aggregate([models[i] for i in part], [updates[i] for i in part])
                phase = "warmup" if t < warm else "fedavg"
                if mode == "waffle" and t >= warm:
                    g = waffle_inject(spec, g, wm_sets[0], config.eta_w,
                                      config.effective_waffle_iters)
                    phase = "waffle"
                if record_globals:
                    global_history.append(g)
                models = [g] * n
            else:
                phase = "tramark"
                if masks is None:
                    plain = fedavg_aggregate([models[i] for i in part], [updates[i] for i in part])
                    masks = partition_masks(plain, config.k)
                    log.info("round %d: watermark region of %d parameters", t, masks.wm_count)
                mask_history.append(masks.wm_mask.copy())
                personal = masked_aggregate(models, updates, masks, part)

                def inject(i):
                    return inject_watermark(spec, personal[i], wm_sets[i], masks, config.eta_w,
                                            config.tau_w, client_rng(config.seed, t, i, INJECT))

                models = list(pmap(inject, range(n)))

            m = evaluate_round(spec, models, wm_sets, d.test, t, phase)
            metrics.append(m)
            log.debug("round %d %s ma=%.4f vr=%.2f interval=%.3f", t, phase, m.ma, m.vr, m.interval)
    finally:
        if pool:
            pool.shutdown()

    return ExperimentResult(config, mode, d, metrics, [np.array(m) for m in models], masks,
                            mask_history, global_history)
