"""Aggregation rules for client weight updates.

Sample-weighted averaging and its generalized weighted form, plus the
defense-based baselines (single-selection Krum, Weiszfeld geometric
median, coordinate-wise trimmed mean). The baselines deliberately ignore
sample counts, matching their original formulations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class ClientUpdate:
    """One client's round submission. ``attacked`` is ground truth kept by
    the simulator for evaluation only; no aggregator reads it."""

    client_id: int
    num_samples: int
    weights: np.ndarray
    attacked: bool = False


@dataclass(frozen=True)
class BaselineParams:
    krum_assumed_attackers: int = 0
    trim_fraction: float = 0.0
    geomed_tol: float = 1e-6
    geomed_max_iters: int = 100


def _check_updates(updates) -> None:
    if not updates:
        raise ValueError("no updates to aggregate")
    length = len(updates[0].weights)
    for u in updates:
        if len(u.weights) != length:
            raise ValueError("updates have mismatched weight lengths")
        if u.num_samples < 1:
            raise ValueError(f"client {u.client_id} has sample count < 1")


def _weighted_sum(vectors, coefficients) -> np.ndarray:
    total = coefficients[0] * vectors[0]
    for coeff, vec in zip(coefficients[1:], vectors[1:]):
        total = total + coeff * vec
    return total


def fedavg_aggregate(updates) -> np.ndarray:
    """Sample-count-weighted mean of the updates."""
    _check_updates(updates)
    n = sum(u.num_samples for u in updates)
    coefficients = [u.num_samples / n for u in updates]
    return _weighted_sum([u.weights for u in updates], coefficients)


def weighted_aggregate(updates, alpha: dict) -> np.ndarray:
    """Sum of alpha_k * w_k; reduces to fedavg_aggregate when
    alpha_k = n_k / n (same summation order)."""
    _check_updates(updates)
    missing = [u.client_id for u in updates if u.client_id not in alpha]
    if missing or len(alpha) != len(updates):
        raise ValueError("alpha keys do not match the update set")
    coefficients = [alpha[u.client_id] for u in updates]
    if sum(coefficients) > 1.0 + 1e-9:
        raise ValueError(f"aggregation weights sum to {sum(coefficients)} > 1")
    return _weighted_sum([u.weights for u in updates], coefficients)


def krum_select(updates, assumed_attackers: int) -> np.ndarray:
    """Return the single update whose summed squared distance to its
    K - f - 2 nearest neighbors is smallest (ties: lowest client id)."""
    _check_updates(updates)
    k = len(updates)
    f = int(assumed_attackers)
    neighbors = k - f - 2
    if neighbors < 1:
        raise ValueError(
            f"krum needs at least assumed_attackers + 3 = {f + 3} updates, got {k}"
        )
    matrix = np.stack([u.weights for u in updates])
    diffs = matrix[:, None, :] - matrix[None, :, :]
    sq_dist = (diffs * diffs).sum(axis=2)
    scores = []
    for i in range(k):
        others = np.delete(sq_dist[i], i)
        others.sort()
        scores.append(float(others[:neighbors].sum()))
    best = min(range(k), key=lambda i: (scores[i], updates[i].client_id))
    return updates[best].weights.copy()


def geomed_aggregate(updates, tol: float = 1e-6, max_iters: int = 100) -> np.ndarray:
    """Approximate geometric median via Weiszfeld iteration.

    Starts from the coordinate-wise mean, clamps distances when an
    iterate lands on a data point, and returns the best iterate seen, so
    the output objective never exceeds the mean's.
    """
    _check_updates(updates)
    points = np.stack([u.weights for u in updates])

    def objective(x):
        return float(np.linalg.norm(points - x, axis=1).sum())

    x = points.mean(axis=0)
    best, best_obj = x.copy(), objective(x)
    for _ in range(max_iters):
        dist = np.linalg.norm(points - x, axis=1)
        dist = np.maximum(dist, 1e-12)
        inv = 1.0 / dist
        new_x = (points * inv[:, None]).sum(axis=0) / inv.sum()
        step = float(np.linalg.norm(new_x - x))
        x = new_x
        obj = objective(x)
        if obj < best_obj:
            best, best_obj = x.copy(), obj
        if step < tol:
            break
    return best


def trimmed_mean_aggregate(updates, trim_fraction: float) -> np.ndarray:
    """Per coordinate, drop the floor(beta*K) smallest and largest values
    and average the rest (unweighted)."""
    _check_updates(updates)
    k = len(updates)
    if not 0.0 <= trim_fraction < 0.5:
        raise ValueError(f"trim fraction {trim_fraction} must be in [0, 0.5)")
    cut = int(trim_fraction * k)
    if 2 * cut >= k:
        raise ValueError(f"trimming {cut} per side leaves no values out of {k}")
    matrix = np.stack([u.weights for u in updates])
    ordered = np.sort(matrix, axis=0)
    return ordered[cut:k - cut].mean(axis=0)
