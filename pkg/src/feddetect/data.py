"""Dataset generation and loading.

The synthetic generator produces Gaussian class clusters sized so a small
dense net separates them easily; it is the desk-scale stand-in for a real
image corpus. A minimal binary loader accepts small image datasets in a
flat byte format (see README for the exact layout).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np


def generate_synthetic_dataset(classes: int, samples: int, input_dim: int,
                               rng, noise_std: float = 1.0,
                               mean_scale: float = 3.0) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian clusters with seeded means; per-class counts within +-1 of
    samples/classes."""
    if classes < 2 or samples < classes or input_dim < 1:
        raise ValueError("need classes >= 2, samples >= classes, input_dim >= 1")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    means = rng.normal(0.0, 1.0, size=(classes, input_dim)) * mean_scale
    counts = np.full(classes, samples // classes, dtype=int)
    counts[: samples % classes] += 1
    features = np.empty((samples, input_dim), dtype=np.float64)
    labels = np.empty(samples, dtype=np.int64)
    row = 0
    for cls in range(classes):
        block = means[cls] + rng.normal(0.0, 1.0, size=(counts[cls], input_dim)) * noise_std
        features[row:row + counts[cls]] = block
        labels[row:row + counts[cls]] = cls
        row += counts[cls]
    order = rng.permutation(samples)
    return features[order], labels[order]


def train_test_split(features, labels, test_fraction: float,
                     rng) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    n = len(labels)
    n_test = max(1, int(round(n * test_fraction)))
    order = rng.permutation(n)
    test_idx, train_idx = order[:n_test], order[n_test:]
    return features[train_idx], labels[train_idx], features[test_idx], labels[test_idx]


# Binary image-file layout: header of 3 little-endian uint32
# (sample count, pixels per sample, class count), then sample_count *
# pixel_count row-major uint8 pixels, then sample_count uint8 labels.
_HEADER = struct.Struct("<III")


def load_image_dataset(path) -> tuple[np.ndarray, np.ndarray, int]:
    """Read the flat byte format; pixels are scaled to [0, 1]."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    n, dim, classes = _HEADER.unpack_from(raw)
    expected = _HEADER.size + n * dim + n
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    if n < 1 or dim < 1 or classes < 2:
        raise ValueError(f"{path}: bad header (n={n}, dim={dim}, classes={classes})")
    body = np.frombuffer(raw, dtype=np.uint8, offset=_HEADER.size)
    pixels = body[: n * dim].reshape(n, dim).astype(np.float64) / 255.0
    labels = body[n * dim:].astype(np.int64)
    if labels.max() >= classes:
        raise ValueError(f"{path}: label {labels.max()} outside {classes} classes")
    return pixels, labels, classes


def write_image_dataset(path, features, labels, classes: int) -> None:
    """Inverse of load_image_dataset; features must already lie in [0, 1]."""
    features = np.asarray(features)
    labels = np.asarray(labels)
    pixels = np.clip(np.rint(features * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(len(labels), features.shape[1], classes))
        fh.write(pixels.tobytes())
        fh.write(labels.astype(np.uint8).tobytes())
