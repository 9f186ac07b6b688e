"""Abnormal-client behaviors applied to local weight updates.

All three attacks are pure transformations: sign flip and additive noise
act on the trained weight vector after honest training; gradient ascent
swaps the training direction and is wired through the trainer's
``direction`` argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn

ATTACK_KINDS = ("sign_flip", "additive_noise", "gradient_ascent")


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    noise_std: float | None = None

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.kind == "additive_noise":
            if self.noise_std is None or self.noise_std <= 0:
                raise ValueError("additive_noise requires noise_std > 0")
        elif self.noise_std is not None:
            raise ValueError(f"noise_std is only valid for additive_noise, not {self.kind}")


def apply_sign_flip(weights: np.ndarray) -> np.ndarray:
    """Negate every element of the weight vector."""
    return -np.asarray(weights, dtype=np.float64)


def apply_additive_noise(weights: np.ndarray, noise_std: float, rng) -> np.ndarray:
    """Add i.i.d. Gaussian noise drawn from the client's stream."""
    weights = np.asarray(weights, dtype=np.float64)
    return weights + rng.normal(0.0, noise_std, size=weights.shape)


def apply_gradient_ascent(net: nn.Network, features, labels,
                          cfg: nn.TrainConfig, rng) -> np.ndarray:
    """Local training with the update sign inverted; otherwise identical
    to the honest client (same shuffles, same stream)."""
    trained = nn.train_network(net, features, labels, cfg, direction="ascent", rng=rng)
    return trained.params
