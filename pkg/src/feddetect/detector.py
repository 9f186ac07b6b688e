"""Server-side autoencoder anomaly detection.

The autoencoder is pre-trained on surrogates accumulated during warm-up
rounds. Each round it assigns every selected client a reconstruction
error, an anomaly score normalized so the best-reconstructed client sits
exactly at 1, and an aggregation weight that either down-weights
(credit-score mode) or excludes (thresholding mode) suspicious clients.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import nn

# Reconstruction errors from overflowed (inf/nan) updates are clamped so a
# single garbage update cannot drag the mean threshold to infinity and
# unflag every other attacker.
ERROR_CAP = 1e30

THRESHOLD_RULES = ("mean", "median")


@dataclass(frozen=True)
class AutoencoderConfig:
    hidden_sizes: tuple[int, ...] = (64, 32, 32, 64)
    batch_size: int = 32
    dropout_rate: float = 0.2
    epochs: int = 200
    learning_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not self.hidden_sizes:
            raise ValueError("autoencoder needs at least one hidden layer")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be >= 1")
        if tuple(self.hidden_sizes) != tuple(reversed(self.hidden_sizes)):
            warnings.warn(
                f"autoencoder hidden sizes {self.hidden_sizes} are not symmetric "
                "about the bottleneck", stacklevel=2,
            )


@dataclass(frozen=True, eq=False)
class Autoencoder:
    net: nn.Network
    training_set_size: int

    @property
    def input_dim(self) -> int:
        return self.net.input_dim


def autoencoder_layers(input_dim: int, hidden_sizes) -> tuple[nn.LayerSpec, ...]:
    """ReLU hidden layers mirrored around the bottleneck, identity output."""
    dims = [input_dim, *hidden_sizes, input_dim]
    layers = [nn.LayerSpec(a, b, "relu") for a, b in zip(dims[:-2], dims[1:-1])]
    layers.append(nn.LayerSpec(dims[-2], dims[-1], "identity"))
    return tuple(layers)


def train_autoencoder(surrogates, cfg: AutoencoderConfig) -> Autoencoder:
    """Pre-train the reconstruction model on accumulated surrogates."""
    samples = np.asarray(surrogates, dtype=np.float64)
    if samples.ndim != 2:
        raise ValueError("surrogate set must be a 2-D matrix (rows = surrogates)")
    if len(samples) < 2:
        raise ValueError(f"need at least 2 surrogates to train, got {len(samples)}")
    rng = np.random.default_rng(cfg.seed)
    net = nn.init_network(autoencoder_layers(samples.shape[1], cfg.hidden_sizes), rng)
    train_cfg = nn.TrainConfig(
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        epochs=cfg.epochs,
        dropout_rate=cfg.dropout_rate,
    )
    net = nn.train_network(net, samples, samples, train_cfg, rng=rng)
    return Autoencoder(net=net, training_set_size=len(samples))


def reconstruction_error(ae: Autoencoder, surrogate) -> float:
    """Squared distance between a surrogate and its reconstruction.

    Dropout is disabled, so the score is deterministic. Non-finite
    results (overflowed updates) are reported as +inf.
    """
    surrogate = np.asarray(surrogate, dtype=np.float64).ravel()
    reconstructed = nn.forward(ae.net, surrogate[None, :])[0]
    err = nn.squared_error(surrogate, reconstructed)
    return err if math.isfinite(err) else math.inf


def mean_reconstruction_error(ae: Autoencoder, surrogates) -> float:
    samples = np.asarray(surrogates, dtype=np.float64)
    return float(np.mean([reconstruction_error(ae, s) for s in samples]))


def anomaly_scores(errors: dict) -> dict:
    """Normalize reconstruction errors so the round's best client scores 1.

    score_k = (1 + err_k) / (1 + min_j err_j); every score is >= 1 and the
    argmin client's score is exactly 1.
    """
    if not errors:
        raise ValueError("no reconstruction errors")
    capped = {}
    for key in errors:
        e = float(errors[key])
        if math.isnan(e) or e > ERROR_CAP:
            e = ERROR_CAP
        if e < 0:
            raise ValueError(f"negative reconstruction error for client {key}")
        capped[key] = e
    floor = min(capped[k] for k in sorted(capped))
    return {key: (1.0 + capped[key]) / (1.0 + floor) for key in errors}


def credit_scores(anomaly: dict, samples: dict, exponent: float) -> dict:
    """Aggregation weights combining sample counts and inverse powered
    anomaly scores; weights sum to 1."""
    if set(anomaly) != set(samples):
        raise ValueError("anomaly and sample-count maps must share the same clients")
    if not anomaly:
        raise ValueError("empty score map")
    for key in anomaly:
        if anomaly[key] < 1.0:
            raise ValueError(f"anomaly score below 1 for client {key}")
        if samples[key] < 1:
            raise ValueError(f"sample count below 1 for client {key}")
    raw = {key: samples[key] * anomaly[key] ** (-float(exponent)) for key in anomaly}
    total = sum(raw[key] for key in sorted(raw))
    return {key: raw[key] / total for key in anomaly}


def threshold_value(anomaly: dict, rule) -> float:
    """Resolve a threshold rule ("mean", "median", or explicit value >= 1)."""
    values = [anomaly[k] for k in sorted(anomaly)]
    if rule == "mean":
        return float(np.mean(values))
    if rule == "median":
        return float(np.median(values))
    threshold = float(rule)
    if threshold < 1.0:
        raise ValueError(
            f"explicit threshold {threshold} < 1 would flag every client"
        )
    return threshold


def threshold_credit_scores(anomaly: dict, samples: dict, rule="mean",
                            renormalize: bool = True) -> tuple[dict, dict]:
    """Hard exclusion: flag clients whose score strictly exceeds the
    threshold, weight survivors by sample count.

    With ``renormalize`` the surviving weights sum to 1; without it they
    keep the n_k/n form, leaving total weight < 1 whenever someone was
    dropped. The round's argmin client (score exactly 1) always survives a
    mean or median threshold, so the survivor set is never empty.
    """
    if set(anomaly) != set(samples):
        raise ValueError("anomaly and sample-count maps must share the same clients")
    if not anomaly:
        raise ValueError("empty score map")
    threshold = threshold_value(anomaly, rule)
    flags = {key: bool(anomaly[key] > threshold) for key in anomaly}
    survivors = [key for key in sorted(anomaly) if not flags[key]]
    if renormalize:
        denom = sum(samples[key] for key in survivors)
    else:
        denom = sum(samples[key] for key in sorted(samples))
    alpha = {
        key: (0.0 if flags[key] else samples[key] / denom) for key in anomaly
    }
    return alpha, flags
