"""Fully connected ReLU network with hand-written backpropagation.

Layers are stored as ``W[l]`` of shape (fan_in, fan_out) and ``b[l]`` of
shape (fan_out,), so a layer computes ``h @ W + b``. Inputs may be a single
vector or a (batch, features) matrix.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

Q_VALUES = "q_values"
ACTION_DISTRIBUTION = "action_distribution"


@dataclass
class MLPParams:
    weights: list
    biases: list

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "MLPParams":
        return MLPParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self):
        """Parameters interleaved as W0, b0, W1, b1, ..."""
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def check(self):
        sizes = self.layer_sizes
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[l], sizes[l + 1]) or b.shape != (sizes[l + 1],):
                raise ValueError(f"layer {l}: weight {w.shape} and bias {b.shape} do not chain")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l}: non-finite parameters")


def init_params(layer_sizes, rng) -> MLPParams:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLPParams(weights, biases)


def zeros_like(params: MLPParams) -> MLPParams:
    return MLPParams([np.zeros_like(w) for w in params.weights], [np.zeros_like(b) for b in params.biases])


def relu(x):
    return np.maximum(x, 0.0)


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=float)
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    x = np.asarray(x, dtype=float)
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


@dataclass
class ForwardTrace:
    inputs: list = field(default_factory=list)  # input to each layer
    pre: list = field(default_factory=list)  # affine output of each layer


def forward(params: MLPParams, x, head: str = Q_VALUES):
    """Affine layers with ReLU in between; returns ``(output, trace)``.

    The ``q_values`` head returns the last affine output unchanged, the
    ``action_distribution`` head applies a softmax over it.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.weights[0].shape[0]:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {params.weights[0].shape[0]}")
    trace = ForwardTrace()
    h = x
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        trace.inputs.append(h)
        z = h @ w + b
        trace.pre.append(z)
        h = z if l == last else relu(z)
    if head == ACTION_DISTRIBUTION:
        return softmax(h), trace
    if head != Q_VALUES:
        raise ValueError(f"unknown head {head!r}")
    return h, trace


def backward(params: MLPParams, trace: ForwardTrace, output_gradient) -> MLPParams:
    """Gradients of a scalar w.r.t. every parameter, given d(scalar)/d(final affine output).

    For batched traces the gradients are summed over the batch.
    """
    g = np.asarray(output_gradient, dtype=float)
    if g.shape != trace.pre[-1].shape:
        raise ValueError(f"output gradient shape {g.shape} != network output shape {trace.pre[-1].shape}")
    n = len(params.weights)
    gw, gb = [None] * n, [None] * n
    for l in range(n - 1, -1, -1):
        if l < n - 1:
            g = g * (trace.pre[l] > 0)
        h = trace.inputs[l]
        if g.ndim == 1:
            gw[l] = np.outer(h, g)
            gb[l] = g.copy()
        else:
            gw[l] = h.T @ g
            gb[l] = g.sum(axis=0)
        if l > 0:
            g = g @ params.weights[l].T
    return MLPParams(gw, gb)


@dataclass
class OptimState:
    lr: float
    # optional heavy-ball momentum; 0 gives plain SGD
    momentum: float = 0.0
    velocity: MLPParams | None = None

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


class NonFiniteGradient(FloatingPointError):
    pass


def sgd_update(params: MLPParams, grads: MLPParams, opt: OptimState, ascent: bool = False) -> MLPParams:
    """One SGD step in place; descends by default, ascends when ``ascent``."""
    for l, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NonFiniteGradient(f"non-finite gradient in layer {l}")
        if gw.shape != params.weights[l].shape or gb.shape != params.biases[l].shape:
            raise ValueError(f"gradient shape mismatch in layer {l}")
    sign = 1.0 if ascent else -1.0
    if opt.momentum:
        if opt.velocity is None:
            opt.velocity = zeros_like(params)
        for v, g in zip(opt.velocity.arrays(), grads.arrays()):
            v *= opt.momentum
            v += g
        grads = opt.velocity
    for p, g in zip(params.arrays(), grads.arrays()):
        p += sign * opt.lr * g
    return params


def clip_by_norm(grads: MLPParams, max_norm: float) -> MLPParams:
    """Rescale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.arrays()))
    if np.isfinite(norm) and norm > max_norm:
        for g in grads.arrays():
            g *= max_norm / norm
    return grads


# --- gradient check ---------------------------------------------------------


def squared_error_loss(target):
    target = np.asarray(target, dtype=float)

    def loss(out):
        d = out - target
        return 0.5 * float(np.sum(d * d)), d

    return loss


def log_softmax_loss(action):
    """Negative log-probability of ``action`` under softmax of the output."""

    def loss(out):
        p = softmax(out)
        g = p.copy()
        g[action] -= 1.0
        return -float(log_softmax(out)[action]), g

    return loss


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_layer: int
    n_checked: int


def gradient_check(params: MLPParams, x, loss, h: float = 1e-5) -> GradCheckReport:
    """Compare :func:`backward` with central differences on every parameter.

    ``loss(output) -> (value, d value / d output)`` acts on the raw final
    layer output. Relative error uses max(|a|, |b|, 1e-6) as denominator so
    exactly-zero gradients (dead units) are judged by absolute error.
    """
    out, trace = forward(params, x)
    _, dout = loss(out)
    grads = backward(params, trace, dout)
    worst, worst_layer, count = 0.0, -1, 0
    for k, (p, g) in enumerate(zip(params.arrays(), grads.arrays())):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss(forward(params, x)[0])[0]
            flat[i] = orig - h
            down = loss(forward(params, x)[0])[0]
            flat[i] = orig
            num = (up - down) / (2 * h)
            rel = abs(num - gflat[i]) / max(abs(num), abs(gflat[i]), 1e-6)
            if rel > worst:
                worst, worst_layer = rel, k // 2
            count += 1
    return GradCheckReport(worst, worst_layer, count)


# --- checkpoint file --------------------------------------------------------
#
# little-endian throughout:
#   8 bytes   magic b"SAVMLP01"
#   uint32    number of layer sizes L (= layers + 1)
#   L x uint32 layer sizes
#   per layer: weight matrix (fan_in x fan_out, row-major float64), then bias (float64)

_MAGIC = b"SAVMLP01"


def save_checkpoint(params: MLPParams, path):
    sizes = params.layer_sizes
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(sizes)))
        fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
        for w, b in zip(params.weights, params.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path) -> MLPParams:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    (n,) = struct.unpack_from("<I", data, 8)
    sizes = struct.unpack_from(f"<{n}I", data, 12)
    off = 12 + 4 * n
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=off).reshape(fan_in, fan_out)
        off += 8 * fan_in * fan_out
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        weights.append(w.astype(float))
        biases.append(b.astype(float))
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return MLPParams(weights, biases)
