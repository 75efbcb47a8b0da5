"""Watermark-removal attacks a leaking client could apply to its model."""
from dataclasses import dataclass

import numpy as np

from . import nn
from .watermark import smallest_magnitude

FP16_EQUIVALENT_BITS = 12


@dataclass(frozen=True)
class AttackConfig:
    kind: str
    prune_ratio: float = 0.0
    finetune_epochs: int = 30
    finetune_lr: float = 0.01
    quant_bits: int = 8
    batch_size: int = 32

    def __post_init__(self):
        if self.kind not in ("prune", "finetune", "quantize"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.quant_bits < 2:
            raise ValueError("quant_bits must be at least 2")


def prune(params, ratio):
    """Global unstructured magnitude pruning of ``round(ratio * d)`` entries."""
    if not 0 <= ratio < 1:
        raise ValueError(f"prune ratio must lie in [0, 1), got {ratio}")
    out = params.copy()
    out[smallest_magnitude(params, int(round(ratio * params.shape[0])))] = 0.0
    return out


def finetune(spec, model, shard, epochs, lr, batch_size, rng):
    """Plain mini-batch SGD over the attacker's shard, one shuffle per epoch."""
    if len(shard) == 0:
        raise ValueError("empty fine-tuning shard")
    theta = model.copy()
    if epochs <= 0 or lr == 0:
        return theta
    bs = min(batch_size, len(shard))
    for _ in range(epochs):
        order = rng.permutation(len(shard))
        for start in range(0, len(shard), bs):
            idx = order[start:start + bs]
            _, g = nn.loss_and_gradient(spec, theta, shard.inputs[idx], shard.labels[idx])
            theta = nn.sgd_step(theta, g, lr)
    return theta


def quantize(params, bits):
    """Symmetric per-model quantize/dequantize with one scale ``max|w| / (2^(b-1) - 1)``."""
    if not 2 <= bits <= 16:
        raise ValueError(f"bits must lie in [2, 16], got {bits}")
    peak = float(np.max(np.abs(params))) if params.size else 0.0
    if peak == 0.0:
        return params.copy()
    scale = peak / (2 ** (bits - 1) - 1)
    x = params.astype(np.float64)
    deq = np.round(x / scale) * scale
    # values already on the grid (up to float32 rounding) stay bit-identical,
    # which makes the attack idempotent
    on_grid = np.abs(deq - x) <= 1e-4 * scale
    return np.where(on_grid, params, deq.astype(np.float32)).astype(np.float32)


def apply_attack(spec, params, config, shard=None, rng=None):
    if config.kind == "prune":
        return prune(params, config.prune_ratio)
    if config.kind == "quantize":
        return quantize(params, config.quant_bits)
    if shard is None:
        raise ValueError("fine-tuning needs the attacker's shard")
    rng = rng if rng is not None else np.random.default_rng(0)
    return finetune(spec, params, shard, config.finetune_epochs, config.finetune_lr,
                    config.batch_size, rng)
