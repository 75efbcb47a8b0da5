"""Feed-forward classifier over a flat float32 parameter vector.

Layout: for each layer in order, the weight matrix of shape
``(fan_in, fan_out)`` stored row-major, followed by its bias of length
``fan_out``. Hidden layers use ReLU, the output layer softmax. Training runs in float32;
every function follows the dtype of ``params``, so float64 vectors work too
(useful for finite-difference checks).
"""
from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-12


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("need at least an input and an output size")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if sizes[-1] < 2:
            raise ValueError("output dimension must be at least 2")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def input_dim(self):
        return self.layer_sizes[0]

    @property
    def num_classes(self):
        return self.layer_sizes[-1]

    @property
    def n_params(self):
        return sum((a + 1) * b for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def layer_slices(self):
        """(weight slice, bias slice, fan_in, fan_out) for every layer."""
        out = []
        pos = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = slice(pos, pos + fan_in * fan_out)
            pos += fan_in * fan_out
            b = slice(pos, pos + fan_out)
            pos += fan_out
            out.append((w, b, fan_in, fan_out))
        return out

    def unflatten(self, params):
        """Views ``[(W, b), ...]`` into ``params``; no copies."""
        self.check(params)
        return [
            (params[w].reshape(fan_in, fan_out), params[b])
            for w, b, fan_in, fan_out in self.layer_slices()
        ]

    def check(self, params):
        if params.ndim != 1 or params.shape[0] != self.n_params:
            raise DimensionError(
                f"parameter vector has shape {params.shape}, expected ({self.n_params},)"
            )

    def init_params(self, rng):
        """Glorot-uniform weights, zero biases."""
        params = np.zeros(self.n_params, dtype=np.float32)
        for w, _, fan_in, fan_out in self.layer_slices():
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[w] = rng.uniform(-limit, limit, size=fan_in * fan_out).astype(np.float32)
        return params


def _check_inputs(spec, inputs, dtype=np.float32):
    inputs = np.asarray(inputs, dtype=dtype)
    if inputs.ndim != 2 or inputs.shape[1] != spec.input_dim:
        raise DimensionError(
            f"inputs have shape {inputs.shape}, expected (batch, {spec.input_dim})"
        )
    return inputs


def _forward_cache(spec, params, inputs):
    layers = spec.unflatten(params)
    acts = [inputs]
    h = inputs
    for li, (W, b) in enumerate(layers):
        z = h @ W + b
        if li < len(layers) - 1:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z
    return layers, acts, h


def softmax(logits):
    z = logits.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def logits(spec, params, inputs):
    inputs = _check_inputs(spec, inputs, params.dtype)
    return _forward_cache(spec, params, inputs)[2]


def forward(spec, params, inputs):
    """Class probabilities, shape ``(batch, C)``, float64."""
    return softmax(logits(spec, params, inputs))


def predict(spec, params, inputs):
    return np.argmax(logits(spec, params, inputs), axis=1)


def accuracy(spec, params, inputs, labels):
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty evaluation set")
    return float(np.mean(predict(spec, params, inputs) == labels))


def loss_and_gradient(spec, params, inputs, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. ``params``."""
    inputs = _check_inputs(spec, inputs, params.dtype)
    labels = np.asarray(labels, dtype=np.int64)
    if inputs.shape[0] == 0:
        raise ValueError("empty batch")
    if labels.shape != (inputs.shape[0],):
        raise DimensionError(f"{labels.shape[0]} labels for {inputs.shape[0]} inputs")
    if labels.min() < 0 or labels.max() >= spec.num_classes:
        raise ValueError("label out of range")

    layers, acts, out = _forward_cache(spec, params, inputs)
    m = inputs.shape[0]
    rows = np.arange(m)
    probs = softmax(out)
    loss = float(-np.mean(np.log(np.clip(probs[rows, labels], PROB_FLOOR, 1.0))))

    delta = probs
    delta[rows, labels] -= 1.0
    delta = (delta / m).astype(params.dtype)

    grad = np.empty_like(params)
    slices = spec.layer_slices()
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        w_sl, b_sl, _, _ = slices[li]
        grad[w_sl] = (acts[li].T @ delta).ravel()
        grad[b_sl] = delta.sum(axis=0, dtype=np.float64)
        if li > 0:
            delta = (delta @ W.T) * (acts[li] > 0)
    return loss, grad


def sgd_step(params, gradient, lr, mask=None):
    """One SGD step; coordinates where ``mask == 0`` are copied untouched."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if gradient.shape != params.shape:
        raise DimensionError("gradient and parameters differ in length")
    lr = params.dtype.type(lr)
    if mask is None:
        return params - lr * gradient
    mask = np.asarray(mask)
    if mask.shape != params.shape:
        raise DimensionError("mask and parameters differ in length")
    out = params.copy()
    sel = mask.astype(bool)
    out[sel] = params[sel] - lr * gradient[sel]
    return out
