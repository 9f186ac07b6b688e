"""Low-dimensional surrogates of weight vectors for anomaly detection.

A surrogate spec freezes, once per experiment, which elements of the flat
weight vector are sampled; every client and every round then shares the
same projection so the detector's input space never moves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SURROGATE_MODES = ("random_indices", "layer_slice")


@dataclass(frozen=True, eq=False)
class SurrogateSpec:
    mode: str
    target_dim: int
    source_layer: int | None
    index_set: np.ndarray    # sorted, distinct, absolute indices into the weight vector
    source_len: int          # full weight-vector length the spec was built for


def build_spec(layout, total_len: int, mode: str, target_dim: int,
               source_layer: int | None, rng) -> SurrogateSpec:
    """Sample ``target_dim`` distinct indices from the source range.

    ``random_indices`` draws over the whole vector; ``layer_slice`` draws
    within the (offset, length) block of one layer.
    """
    if mode not in SURROGATE_MODES:
        raise ValueError(f"unknown surrogate mode {mode!r}")
    if mode == "layer_slice":
        if source_layer is None:
            raise ValueError("layer_slice mode requires source_layer")
        if not 0 <= source_layer < len(layout):
            raise ValueError(f"source_layer {source_layer} out of range")
        offset, length = layout[source_layer]
    else:
        offset, length = 0, total_len
    if not 1 <= target_dim <= length:
        raise ValueError(
            f"target_dim {target_dim} must be in [1, {length}] for the source range"
        )
    picked = rng.choice(length, size=target_dim, replace=False)
    index_set = np.sort(picked) + offset
    return SurrogateSpec(mode, target_dim, source_layer, index_set, total_len)


def extract(spec: SurrogateSpec, weights) -> np.ndarray:
    """Gather the spec's elements from a full weight vector."""
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if weights.shape[0] != spec.source_len:
        raise ValueError(
            f"weight vector length {weights.shape[0]} does not match "
            f"spec source length {spec.source_len}"
        )
    return weights[spec.index_set]


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Per-dimension affine map frozen on the warm-up surrogate buffer."""

    mean: np.ndarray
    std: np.ndarray

    def transform(self, vector: np.ndarray) -> np.ndarray:
        return (np.asarray(vector, dtype=np.float64) - self.mean) / self.std


def fit_standardizer(samples: np.ndarray, std_floor: float = 1e-8) -> Standardizer:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or len(samples) < 1:
        raise ValueError("need a non-empty 2-D sample matrix")
    mean = samples.mean(axis=0)
    std = np.maximum(samples.std(axis=0), std_floor)
    return Standardizer(mean, std)
