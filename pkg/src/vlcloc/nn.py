"""Dense feed-forward network with hand-written backprop, dropout and Adam.

Inputs may be a single vector of shape (n_in,) or a batch of shape
(batch, n_in). Batch gradients are sums over rows, computed by one matrix
product so the accumulation order is fixed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

FORMAT_VERSION = 1
HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "tanh", "sigmoid")


class NetError(ValueError):
    pass


@dataclass(frozen=True)
class DenseNet:
    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]  # layer i has shape (out, in)
    biases: tuple[np.ndarray, ...]
    hidden_activation: str = "relu"
    output_activation: str = "identity"
    dropout_p: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "dropout_p", tuple(float(p) for p in self.dropout_p))
        if len(sizes) < 2 or min(sizes) < 1:
            raise NetError(f"invalid layer sizes {sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise NetError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise NetError(f"unknown output activation {self.output_activation!r}")
        if len(self.dropout_p) != len(sizes) - 2:
            raise NetError("dropout_p needs one entry per hidden layer")
        if any(not 0 <= p < 1 for p in self.dropout_p):
            raise NetError("dropout probabilities must be in [0, 1)")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise NetError("parameter count does not match layer sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise NetError(f"layer {i} parameter shapes {w.shape}, {b.shape} do not chain")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NetError(f"layer {i} has non-finite parameters")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "DenseNet":
        return replace(self, weights=tuple(params[0::2]), biases=tuple(params[1::2]))


@dataclass(frozen=True)
class Grads:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    inputs: np.ndarray

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def init_net(layer_sizes: Sequence[int], hidden_activation: str = "relu",
             output_activation: str = "identity", dropout_p: float | Sequence[float] = 0.0,
             seed: int = 0) -> DenseNet:
    """He-uniform weights on ReLU layers, Xavier-uniform elsewhere, zero biases."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise NetError(f"invalid layer sizes {sizes}")
    n_hidden = len(sizes) - 2
    if np.isscalar(dropout_p):
        dropout_p = (float(dropout_p),) * n_hidden
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        act = hidden_activation if i < n_hidden else output_activation
        if act == "relu":
            bound = np.sqrt(6.0 / fan_in)
        else:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return DenseNet(sizes, tuple(weights), tuple(biases), hidden_activation,
                    output_activation, tuple(dropout_p))


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(np.float64)  # ReLU'(0) = 0
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass
class Cache:
    single: bool
    inputs: list[np.ndarray] = field(default_factory=list)  # input to each layer
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)  # activations before dropout
    masks: list[np.ndarray | None] = field(default_factory=list)
    layer_sizes: tuple[int, ...] = ()


def forward(net: DenseNet, x: np.ndarray,
            dropout_rng: np.random.Generator | int | None = None) -> tuple[np.ndarray, Cache]:
    """Run the net. ``dropout_rng=None`` is eval mode; a seed or generator is train mode.

    Train mode uses inverted dropout: kept activations are divided by 1 - p,
    so eval mode needs no rescaling.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != net.layer_sizes[0]:
        raise NetError(f"input shape {x.shape} does not match input size {net.layer_sizes[0]}")
    if not np.all(np.isfinite(h)):
        raise NetError("non-finite input")
    rng = dropout_rng
    if rng is not None and not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    cache = Cache(single=single, layer_sizes=net.layer_sizes)
    last = net.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        cache.inputs.append(h)
        z = h @ w.T + b
        act = net.hidden_activation if i < last else net.output_activation
        a = _act(act, z)
        mask = None
        cache.pre.append(z)
        cache.post.append(a)
        if i < last and rng is not None and net.dropout_p[i] > 0:
            keep = 1.0 - net.dropout_p[i]
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        cache.masks.append(mask)
        h = a
    if not np.all(np.isfinite(h)):
        raise NetError("forward pass produced non-finite output")
    return (h[0] if single else h), cache


def backward(net: DenseNet, cache: Cache, grad_out: np.ndarray) -> Grads:
    """Reverse-mode gradients of sum(grad_out * output) w.r.t. parameters and inputs."""
    if cache.layer_sizes != net.layer_sizes or len(cache.pre) != net.n_layers:
        raise NetError("cache does not come from a forward pass of this net")
    g = np.asarray(grad_out, dtype=np.float64)
    if cache.single:
        g = g[None, :]
    if g.shape != cache.post[-1].shape:
        raise NetError(f"output gradient shape {g.shape} != output shape {cache.post[-1].shape}")
    last = net.n_layers - 1
    gw: list[np.ndarray] = [None] * net.n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * net.n_layers  # type: ignore[list-item]
    for i in range(last, -1, -1):
        act = net.hidden_activation if i < last else net.output_activation
        if cache.masks[i] is not None:
            g = g * cache.masks[i]
        dz = g * _act_grad(act, cache.pre[i], cache.post[i])
        gw[i] = dz.T @ cache.inputs[i]
        gb[i] = dz.sum(axis=0)
        g = dz @ net.weights[i]
    return Grads(tuple(gw), tuple(gb), g[0] if cache.single else g)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean of squared differences over all components, and its gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise NetError(f"shape mismatch {pred.shape} vs {target.shape}")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(target))):
        raise NetError("non-finite input to mse_loss")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def bce_with_logits(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy from logits, stable for large |logit|."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise NetError(f"shape mismatch {z.shape} vs {y.shape}")
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
        raise NetError("non-finite input to bce_loss")
    # log(1 + exp(z)) - y z, written to avoid overflow
    loss = np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))
    prob = 0.5 * (1.0 + np.tanh(0.5 * z))
    return float(np.mean(loss)), (prob - y) / z.size


def bce_loss(probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy on probabilities in (0, 1)."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise NetError(f"shape mismatch {p.shape} vs {y.shape}")
    if not np.all(np.isfinite(p)) or np.any((p <= 0) | (p >= 1)):
        raise NetError("probabilities must lie in (0, 1)")
    loss = -(y * np.log(p) + (1 - y) * np.log1p(-p))
    return float(np.mean(loss)), (p - y) / (p * (1 - p)) / p.size


@dataclass(frozen=True)
class AdamState:
    step: int
    m: tuple[np.ndarray, ...]
    v: tuple[np.ndarray, ...]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, net: DenseNet, lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        zeros = tuple(np.zeros_like(p) for p in net.params())
        return cls(0, zeros, zeros, lr, beta1, beta2, eps)


def adam_update_(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
                 m: Sequence[np.ndarray], v: Sequence[np.ndarray], step: int, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place bias-corrected Adam update; ``step`` is the 1-based step number."""
    c1 = 1.0 / (1 - beta1 ** step)
    c2 = 1.0 / (1 - beta2 ** step)
    for p, g, mi, vi in zip(params, grads, m, v):
        mi *= beta1
        mi += (1 - beta1) * g
        vi *= beta2
        vi += (1 - beta2) * (g * g)
        denom = np.sqrt(vi * c2)
        denom += eps
        p -= (lr * c1) * mi / denom


def adam_step(net: DenseNet, grads: Grads, state: AdamState) -> tuple[DenseNet, AdamState]:
    params = net.params()
    gs = grads.params()
    if len(gs) != len(params) or any(g.shape != p.shape for g, p in zip(gs, params)):
        raise NetError("gradient shapes do not match parameters")
    if len(state.m) != len(params) or any(m.shape != p.shape for m, p in zip(state.m, params)):
        raise NetError("optimizer state does not match parameters")
    new_p = [p.copy() for p in params]
    new_m = [m.copy() for m in state.m]
    new_v = [v.copy() for v in state.v]
    t = state.step + 1
    adam_update_(new_p, gs, new_m, new_v, t, state.lr, state.beta1, state.beta2, state.eps)
    return net.with_params(new_p), replace(state, step=t, m=tuple(new_m), v=tuple(new_v))


class Trainer:
    """Mutable Adam loop over one net, for training code that runs many steps.

    Holds private parameter copies; ``snapshot`` returns an immutable DenseNet.
    """

    def __init__(self, net: DenseNet, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8) -> None:
        self.template = net
        self.params = [p.copy() for p in net.params()]
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.step = 0
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self._live = net.with_params(self.params)

    @property
    def net(self) -> DenseNet:
        """A view sharing the live parameter arrays; do not keep across updates."""
        return self._live

    def update(self, grads: Grads) -> None:
        self.step += 1
        adam_update_(self.params, grads.params(), self.m, self.v, self.step, self.lr,
                     self.beta1, self.beta2, self.eps)

    def snapshot(self) -> DenseNet:
        return self.template.with_params([p.copy() for p in self.params])

    def load(self, net: DenseNet) -> None:
        for dst, src in zip(self.params, net.params()):
            dst[...] = src


def net_to_dict(net: DenseNet) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "layer_sizes": list(net.layer_sizes),
        "hidden_activation": net.hidden_activation,
        "output_activation": net.output_activation,
        "dropout_p": list(net.dropout_p),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def net_from_dict(d: dict) -> DenseNet:
    if d.get("format_version") != FORMAT_VERSION:
        raise NetError(f"unsupported model format version {d.get('format_version')!r}")
    return DenseNet(
        tuple(d["layer_sizes"]),
        tuple(np.array(w, dtype=np.float64).reshape(o, i) for w, o, i in
              zip(d["weights"], d["layer_sizes"][1:], d["layer_sizes"][:-1])),
        tuple(np.array(b, dtype=np.float64) for b in d["biases"]),
        d["hidden_activation"], d["output_activation"], tuple(d["dropout_p"]),
    )


def save_net(net: DenseNet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(net_to_dict(net)) + "\n", encoding="utf-8")


def load_net(path: str | Path) -> DenseNet:
    return net_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
