"""Federated-round orchestration.

Owns the client population, runs local training, applies configured
attacks, dispatches aggregation (plain averaging, detector-weighted, or a
defense baseline), and emits one RoundRecord per round. Every random
choice draws from a stream derived from (master_seed, purpose, round,
client), so a full experiment is a pure function of its configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .aggregation import (
    BaselineParams,
    ClientUpdate,
    fedavg_aggregate,
    geomed_aggregate,
    krum_select,
    trimmed_mean_aggregate,
    weighted_aggregate,
)
from .attacks import AttackSpec, apply_additive_noise, apply_sign_flip
from .detector import (
    AutoencoderConfig,
    anomaly_scores,
    credit_scores,
    reconstruction_error,
    threshold_credit_scores,
    threshold_value,
    train_autoencoder,
)
from .rng import derive_rng
from .surrogate import SurrogateSpec, extract, fit_standardizer

DETECTOR_METHODS = ("credit_score", "thresholding")
BASELINE_METHODS = ("krum", "geomed", "trimmed_mean")
AGGREGATION_METHODS = ("fedavg",) + DETECTOR_METHODS + BASELINE_METHODS

# Aggregation/detection failures that trigger the keep-previous-weights
# fallback instead of aborting the experiment.
_AGGREGATION_ERRORS = (ValueError, ZeroDivisionError, FloatingPointError)


@dataclass(frozen=True, eq=False)
class ClientState:
    client_id: int
    features: np.ndarray
    labels: np.ndarray
    attack: AttackSpec | None = None

    @property
    def num_samples(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class FederationConfig:
    total_clients: int
    clients_per_round: int
    rounds: int
    warmup_rounds: int
    abnormal_fraction: float
    aggregation_method: str
    train_cfg: nn.TrainConfig
    master_seed: int
    dirichlet_concentration: float = 0.5
    allow_attacks_in_warmup: bool = False

    @property
    def total_rounds(self) -> int:
        return self.warmup_rounds + self.rounds

    @property
    def attackers_per_round(self) -> int:
        return int(self.abnormal_fraction * self.clients_per_round)


@dataclass
class RoundRecord:
    round_index: int
    method: str
    attack: str
    global_accuracy: float
    global_loss: float
    detection_precision: float | None = None
    detection_recall: float | None = None
    anomaly_report: dict | None = None
    selected_ids: list = field(default_factory=list)
    fallback: bool = False
    master_seed: int = 0

    def to_dict(self) -> dict:
        return {
            "round": self.round_index,
            "method": self.method,
            "attack": self.attack,
            "accuracy": self.global_accuracy,
            "loss": self.global_loss,
            "precision": self.detection_precision,
            "recall": self.detection_recall,
            "anomaly_report": self.anomaly_report,
            "selected_ids": list(self.selected_ids),
            "fallback": self.fallback,
            "master_seed": self.master_seed,
        }


def partition_non_iid(features, labels, total_clients: int,
                      concentration: float, rng) -> list[ClientState]:
    """Dirichlet label split: per class, client shares are drawn from
    Dir(concentration). Every sample lands on exactly one client and no
    client ends up empty (empties steal one sample from the largest)."""
    labels = np.asarray(labels)
    if len(labels) < total_clients:
        raise ValueError(
            f"{len(labels)} samples cannot cover {total_clients} clients"
        )
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    assignments: list[list[int]] = [[] for _ in range(total_clients)]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        shares = rng.dirichlet(np.full(total_clients, concentration))
        cuts = (np.cumsum(shares) * len(idx)).astype(int)[:-1]
        for client_id, part in enumerate(np.split(idx, cuts)):
            assignments[client_id].extend(part.tolist())
    for client_id in range(total_clients):
        while not assignments[client_id]:
            donor = max(range(total_clients), key=lambda c: len(assignments[c]))
            assignments[client_id].append(assignments[donor].pop())
    clients = []
    for client_id, owned in enumerate(assignments):
        idx = np.sort(np.asarray(owned, dtype=int))
        clients.append(ClientState(client_id, features[idx], labels[idx]))
    return clients


def assign_attackers(clients: list[ClientState], fraction: float,
                     attack: AttackSpec | None, rng) -> list[ClientState]:
    """Designate a fixed floor(fraction * total) subset as abnormal."""
    count = int(fraction * len(clients))
    if count == 0 or attack is None:
        return list(clients)
    picked = rng.choice(len(clients), size=count, replace=False)
    chosen = set(int(i) for i in picked)
    return [
        replace(c, attack=attack) if c.client_id in chosen else c
        for c in clients
    ]


def detection_metrics(flags: dict, attacked: dict) -> tuple[float | None, float | None]:
    """Precision/recall of flagged vs ground truth; None when undefined
    (no attackers selected, or nothing flagged for precision)."""
    true_positive = sum(1 for k in flags if flags[k] and attacked[k])
    n_flagged = sum(1 for k in flags if flags[k])
    n_attackers = sum(1 for k in attacked if attacked[k])
    if n_attackers == 0:
        return None, None
    precision = true_positive / n_flagged if n_flagged else None
    recall = true_positive / n_attackers
    return precision, recall


class Federation:
    """Mutable experiment state: clients, detector, and the round loop."""

    def __init__(self, cfg: FederationConfig, clients: list[ClientState],
                 model_layers, test_features, test_labels, *,
                 surrogate_spec: SurrogateSpec | None = None,
                 standardize_surrogates: bool = True,
                 autoencoder_cfg: AutoencoderConfig | None = None,
                 credit_exponent: float = 2.0,
                 threshold_rule="mean",
                 paper_exact_thresholding: bool = False,
                 retrain_every: int = 0,
                 baselines: BaselineParams | None = None):
        if cfg.aggregation_method not in AGGREGATION_METHODS:
            raise ValueError(f"unknown aggregation method {cfg.aggregation_method!r}")
        self.cfg = cfg
        self.clients = list(clients)
        self.template = nn.init_network(model_layers, derive_rng(cfg.master_seed, "model-init"))
        self.test_features = np.asarray(test_features, dtype=np.float64)
        self.test_labels = np.asarray(test_labels)
        self.surrogate_spec = surrogate_spec
        self.standardize_surrogates = standardize_surrogates
        self.autoencoder_cfg = autoencoder_cfg or AutoencoderConfig()
        self.credit_exponent = credit_exponent
        self.threshold_rule = threshold_rule
        self.paper_exact_thresholding = paper_exact_thresholding
        self.retrain_every = retrain_every
        self.baselines = baselines or BaselineParams()
        self.surrogate_buffer: list[np.ndarray] = []
        self.autoencoder = None
        self.standardizer = None
        self._ae_trained_at = -1
        self._attackers = [c for c in self.clients if c.attack is not None]
        self._honest = [c for c in self.clients if c.attack is None]

    # -- setup ---------------------------------------------------------

    def initial_weights(self) -> np.ndarray:
        return self.template.params.copy()

    @property
    def total_samples(self) -> int:
        return sum(c.num_samples for c in self.clients)

    def _needs_detector(self) -> bool:
        return self.cfg.aggregation_method in DETECTOR_METHODS

    def _in_warmup(self, round_index: int) -> bool:
        return round_index < self.cfg.warmup_rounds

    def _attacks_active(self, round_index: int) -> bool:
        if self.cfg.abnormal_fraction <= 0 or not self._attackers:
            return False
        return not self._in_warmup(round_index) or self.cfg.allow_attacks_in_warmup

    # -- round mechanics -----------------------------------------------

    def select_round_clients(self, round_index: int) -> list[ClientState]:
        """Exactly K distinct clients; attack rounds carry exactly
        floor(abnormal_fraction * K) designated attackers, warm-up rounds
        select honest clients only."""
        cfg = self.cfg
        rng = derive_rng(cfg.master_seed, "select", round_index)
        quota = cfg.attackers_per_round if self._attacks_active(round_index) else 0

        def pick(pool, count):
            if count == 0:
                return []
            if count > len(pool):
                raise ValueError(
                    f"round {round_index}: cannot select {count} from pool of {len(pool)}"
                )
            chosen = rng.choice(len(pool), size=count, replace=False)
            return [pool[i] for i in sorted(int(j) for j in chosen)]

        selected = pick(self._attackers, quota)
        selected += pick(self._honest, cfg.clients_per_round - quota)
        return sorted(selected, key=lambda c: c.client_id)

    def _client_update(self, client: ClientState, global_weights,
                       round_index: int, attacks_on: bool) -> ClientUpdate:
        cfg = self.cfg
        rng = derive_rng(cfg.master_seed, "train", round_index, client.client_id)
        spec = client.attack if attacks_on else None
        direction = "ascent" if spec is not None and spec.kind == "gradient_ascent" else "descent"
        net = nn.with_params(self.template, global_weights)
        trained = nn.train_network(net, client.features, client.labels,
                                   cfg.train_cfg, direction=direction, rng=rng)
        weights = trained.params
        if spec is not None and spec.kind == "sign_flip":
            weights = apply_sign_flip(weights)
        elif spec is not None and spec.kind == "additive_noise":
            attack_rng = derive_rng(cfg.master_seed, "attack", round_index, client.client_id)
            weights = apply_additive_noise(weights, spec.noise_std, attack_rng)
        return ClientUpdate(client.client_id, client.num_samples, weights,
                            attacked=spec is not None)

    def _ensure_autoencoder(self, round_index: int) -> None:
        due = self.autoencoder is None or (
            self.retrain_every > 0
            and round_index - self._ae_trained_at >= self.retrain_every
        )
        if not due:
            return
        samples = np.stack(self.surrogate_buffer) if self.surrogate_buffer else np.empty((0, 0))
        if self.standardize_surrogates:
            if self.standardizer is None:
                self.standardizer = fit_standardizer(samples)
            samples = np.stack([self.standardizer.transform(s) for s in samples])
        cfg = replace(self.autoencoder_cfg,
                      seed=derive_rng(self.cfg.master_seed, "autoencoder", round_index)
                      .integers(0, 2 ** 63 - 1))
        self.autoencoder = train_autoencoder(samples, cfg)
        self._ae_trained_at = round_index

    def _score_surrogate(self, weights: np.ndarray) -> float:
        s = extract(self.surrogate_spec, weights)
        if self.standardizer is not None:
            s = self.standardizer.transform(s)
        return reconstruction_error(self.autoencoder, s)

    def _detect_and_weight(self, updates, method: str):
        """Anomaly-scored aggregation weights plus the per-client report."""
        errors = {u.client_id: self._score_surrogate(u.weights) for u in updates}
        scores = anomaly_scores(errors)
        counts = {u.client_id: u.num_samples for u in updates}
        threshold = threshold_value(scores, self.threshold_rule)
        if method == "credit_score":
            alpha = credit_scores(scores, counts, self.credit_exponent)
            flags = {k: bool(scores[k] > threshold) for k in scores}
            recorded_alpha = alpha
        else:
            alpha, flags = threshold_credit_scores(
                scores, counts, self.threshold_rule,
                renormalize=not self.paper_exact_thresholding,
            )
            total = sum(counts[k] for k in sorted(counts))
            recorded_alpha = {
                k: (0.0 if flags[k] else counts[k] / total) for k in scores
            }
        aggregated = weighted_aggregate(updates, alpha)
        report = {
            int(k): {
                "error": float(errors[k]),
                "anomaly_score": float(scores[k]),
                "alpha": float(recorded_alpha[k]),
                "flagged": bool(flags[k]),
            }
            for k in sorted(scores)
        }
        return aggregated, report, flags

    def _aggregate_baseline(self, updates, method: str) -> np.ndarray:
        params = self.baselines
        if method == "krum":
            return krum_select(updates, params.krum_assumed_attackers)
        if method == "geomed":
            return geomed_aggregate(updates, params.geomed_tol, params.geomed_max_iters)
        if method == "trimmed_mean":
            return trimmed_mean_aggregate(updates, params.trim_fraction)
        raise ValueError(f"unknown baseline {method!r}")

    def run_round(self, global_weights: np.ndarray,
                  round_index: int) -> tuple[np.ndarray, RoundRecord]:
        cfg = self.cfg
        in_warmup = self._in_warmup(round_index)
        attacks_on = self._attacks_active(round_index)
        method = "fedavg" if in_warmup else cfg.aggregation_method
        selected = self.select_round_clients(round_index)
        updates = [
            self._client_update(c, global_weights, round_index, attacks_on)
            for c in selected
        ]
        attacked = {u.client_id: u.attacked for u in updates}

        report = None
        flags = None
        fallback = False
        precision = recall = None
        if self._needs_detector() and in_warmup:
            self.surrogate_buffer.extend(
                extract(self.surrogate_spec, u.weights) for u in updates
            )
        try:
            if method in DETECTOR_METHODS:
                self._ensure_autoencoder(round_index)
                new_weights, report, flags = self._detect_and_weight(updates, method)
                precision, recall = detection_metrics(flags, attacked)
            elif method in BASELINE_METHODS:
                new_weights = self._aggregate_baseline(updates, method)
            else:
                new_weights = fedavg_aggregate(updates)
        except _AGGREGATION_ERRORS:
            new_weights = np.asarray(global_weights, dtype=np.float64).copy()
            fallback = True
        if (self._needs_detector() and not in_warmup
                and self.retrain_every > 0 and flags is not None):
            self.surrogate_buffer.extend(
                extract(self.surrogate_spec, u.weights)
                for u in updates if not flags[u.client_id]
            )

        accuracy, loss = nn.evaluate_classifier(
            nn.with_params(self.template, new_weights),
            self.test_features, self.test_labels,
        )
        record = RoundRecord(
            round_index=round_index,
            method=method,
            attack=self._attack_label(attacks_on),
            global_accuracy=accuracy,
            global_loss=loss,
            detection_precision=precision,
            detection_recall=recall,
            anomaly_report=report,
            selected_ids=[c.client_id for c in selected],
            fallback=fallback,
            master_seed=cfg.master_seed,
        )
        return new_weights, record

    def _attack_label(self, attacks_on: bool) -> str:
        if not attacks_on or not self._attackers:
            return "none"
        return self._attackers[0].attack.kind
