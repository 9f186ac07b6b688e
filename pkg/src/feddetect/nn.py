"""Minimal dense neural-network kernel.

Fully connected layers stored as a single flat parameter vector, with
forward passes, analytic backprop, and plain mini-batch SGD. The same
kernel drives both the federated classifier and the server-side
autoencoder. Networks are immutable values: training returns a new
Network and never touches the input.

Attacked simulations legitimately push weights to inf/nan; the kernel
propagates non-finite values silently instead of warning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "identity", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    """One fully connected layer: output = activation(input @ W + b)."""

    input_dim: int
    output_dim: int
    activation: str = "relu"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    batch_size: int
    epochs: int
    dropout_rate: float = 0.0
    rng_seed: int = 0


@dataclass(frozen=True, eq=False)
class Network:
    """Layer specs plus one flat parameter vector.

    ``layout[i]`` is the (offset, length) block of layer i inside
    ``params``; each block holds the weight matrix (row-major,
    input_dim x output_dim) followed by the bias vector.
    """

    layers: tuple[LayerSpec, ...]
    params: np.ndarray
    layout: tuple[tuple[int, int], ...]

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].output_dim


def validate_layers(layers: tuple[LayerSpec, ...]) -> None:
    if not layers:
        raise ValueError("network needs at least one layer")
    for i, spec in enumerate(layers):
        if spec.input_dim < 1 or spec.output_dim < 1:
            raise ValueError(f"layer {i}: dimensions must be >= 1")
        if spec.activation not in ACTIVATIONS:
            raise ValueError(f"layer {i}: unknown activation {spec.activation!r}")
        if spec.activation == "softmax" and i != len(layers) - 1:
            raise ValueError("softmax is only allowed on the final layer")
        if i > 0 and layers[i - 1].output_dim != spec.input_dim:
            raise ValueError(
                f"layer {i}: input_dim {spec.input_dim} does not match "
                f"previous output_dim {layers[i - 1].output_dim}"
            )


def layer_layout(layers: tuple[LayerSpec, ...]) -> tuple[tuple[tuple[int, int], ...], int]:
    """Contiguous (offset, length) blocks per layer and the total length."""
    blocks = []
    offset = 0
    for spec in layers:
        length = spec.input_dim * spec.output_dim + spec.output_dim
        blocks.append((offset, length))
        offset += length
    return tuple(blocks), offset


def init_network(layers, rng: int | np.random.Generator) -> Network:
    """Glorot-uniform weights, zero biases, drawn layer by layer from rng."""
    layers = tuple(layers)
    validate_layers(layers)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    layout, total = layer_layout(layers)
    params = np.zeros(total, dtype=np.float64)
    for spec, (offset, _) in zip(layers, layout):
        limit = float(np.sqrt(6.0 / (spec.input_dim + spec.output_dim)))
        w_len = spec.input_dim * spec.output_dim
        params[offset:offset + w_len] = rng.uniform(-limit, limit, size=w_len)
    return Network(layers, params, layout)


def with_params(net: Network, params: np.ndarray) -> Network:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != net.params.shape:
        raise ValueError(
            f"parameter vector has length {params.shape}, expected {net.params.shape}"
        )
    return Network(net.layers, params, net.layout)


def layer_weights(net: Network, index: int) -> tuple[np.ndarray, np.ndarray]:
    """(W, b) views into the flat parameter vector for one layer."""
    spec = net.layers[index]
    offset, _ = net.layout[index]
    w_len = spec.input_dim * spec.output_dim
    w = net.params[offset:offset + w_len].reshape(spec.input_dim, spec.output_dim)
    b = net.params[offset + w_len:offset + w_len + spec.output_dim]
    return w, b


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "identity":
        return z
    with np.errstate(over="ignore", invalid="ignore"):
        shifted = z - z.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)


def _forward_cached(net, batch, masks):
    """All layer activations (post-dropout) and pre-activations."""
    activations = [batch]
    pre = []
    a = batch
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(len(net.layers)):
            w, b = layer_weights(net, i)
            z = a @ w + b
            pre.append(z)
            a = _activate(net.layers[i].activation, z)
            if masks is not None and masks[i] is not None:
                a = a * masks[i]
            activations.append(a)
    return activations, pre


def _as_batch(net: Network, batch) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != net.input_dim:
        raise ValueError(
            f"batch shape {batch.shape} does not match input_dim {net.input_dim}"
        )
    return batch


def forward(net: Network, batch, masks=None) -> np.ndarray:
    """Feed a batch (rows = samples) through the network."""
    batch = _as_batch(net, batch)
    activations, _ = _forward_cached(net, batch, masks)
    return activations[-1]


def make_dropout_masks(net: Network, batch_rows: int, rate: float, rng) -> list | None:
    """Inverted-dropout masks for hidden activations; the final layer is exempt."""
    if rate <= 0.0:
        return None
    keep = 1.0 - rate
    masks = []
    for i, spec in enumerate(net.layers):
        if i == len(net.layers) - 1:
            masks.append(None)
        else:
            masks.append((rng.random((batch_rows, spec.output_dim)) < keep) / keep)
    return masks


def loss_and_gradient(net: Network, batch, targets, masks=None) -> tuple[float, np.ndarray]:
    """Batch loss and the flat parameter gradient.

    Softmax networks take integer class labels and use mean cross-entropy;
    every other output activation takes a target matrix and uses the mean
    per-sample squared error.
    """
    batch = _as_batch(net, batch)
    activations, pre = _forward_cached(net, batch, masks)
    out = activations[-1]
    n = batch.shape[0]
    final = net.layers[-1].activation
    with np.errstate(over="ignore", invalid="ignore"):
        if final == "softmax":
            labels = np.asarray(targets)
            if labels.shape != (n,):
                raise ValueError(f"labels shape {labels.shape}, expected ({n},)")
            picked = np.clip(out[np.arange(n), labels], 1e-15, None)
            loss = float(-np.log(picked).mean())
            dz = out.copy()
            dz[np.arange(n), labels] -= 1.0
            dz /= n
        else:
            t = np.asarray(targets, dtype=np.float64)
            if t.shape != out.shape:
                raise ValueError(f"targets shape {t.shape}, expected {out.shape}")
            diff = out - t
            loss = float((diff * diff).sum() / n)
            dout = 2.0 * diff / n
            dz = dout if final == "identity" else dout * (pre[-1] > 0)

        grad = np.zeros_like(net.params)
        for i in range(len(net.layers) - 1, -1, -1):
            spec = net.layers[i]
            offset, _ = net.layout[i]
            w_len = spec.input_dim * spec.output_dim
            grad[offset:offset + w_len] = (activations[i].T @ dz).ravel()
            grad[offset + w_len:offset + w_len + spec.output_dim] = dz.sum(axis=0)
            if i > 0:
                w, _ = layer_weights(net, i)
                da = dz @ w.T
                if masks is not None and masks[i - 1] is not None:
                    da = da * masks[i - 1]
                prev = net.layers[i - 1].activation
                dz = da if prev == "identity" else da * (pre[i - 1] > 0)
    return loss, grad


def sgd_epoch(net: Network, batch, targets, cfg: TrainConfig,
              direction: str = "descent", rng=None) -> Network:
    """One epoch of mini-batch SGD; ``direction="ascent"`` negates the step.

    The dataset is shuffled once per epoch from ``rng``; dropout masks (if
    any) are drawn per batch from the same stream, so descent and ascent
    consume the stream identically.
    """
    if direction not in ("descent", "ascent"):
        raise ValueError(f"unknown direction {direction!r}")
    batch = _as_batch(net, batch)
    targets = np.asarray(targets)
    if len(batch) == 0:
        raise ValueError("empty dataset")
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    sign = -1.0 if direction == "descent" else 1.0
    order = rng.permutation(len(batch))
    params = net.params.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, len(batch), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            current = with_params(net, params)
            masks = make_dropout_masks(net, len(idx), cfg.dropout_rate, rng)
            _, grad = loss_and_gradient(current, batch[idx], targets[idx], masks)
            params = params + sign * cfg.learning_rate * grad
    return with_params(net, params)


def train_network(net: Network, batch, targets, cfg: TrainConfig,
                  direction: str = "descent", rng=None) -> Network:
    """cfg.epochs epochs of SGD, continuing one RNG stream throughout."""
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    for _ in range(cfg.epochs):
        net = sgd_epoch(net, batch, targets, cfg, direction=direction, rng=rng)
    return net


def mean_loss(net: Network, batch, targets) -> float:
    """Evaluation-mode batch loss (no dropout)."""
    loss, _ = loss_and_gradient(net, batch, targets)
    return loss


def evaluate_classifier(net: Network, batch, labels) -> tuple[float, float]:
    """(accuracy, mean cross-entropy) of a softmax net on a labeled set."""
    labels = np.asarray(labels)
    probs = forward(net, batch)
    predictions = probs.argmax(axis=1)
    accuracy = float((predictions == labels).mean())
    with np.errstate(invalid="ignore"):
        picked = np.clip(probs[np.arange(len(labels)), labels], 1e-15, None)
        loss = float(-np.log(picked).mean())
    return accuracy, loss


def squared_error(a, b) -> float:
    """Squared L2 distance between two equal-length vectors."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    d = a - b
    with np.errstate(over="ignore", invalid="ignore"):
        return float(d @ d)
