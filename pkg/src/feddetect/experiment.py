"""Experiment execution and persistence.

Builds the dataset and federation from a validated config, runs warm-up
plus attack rounds, and persists byte-stable outputs: ``rounds.csv`` (one
row per round, fixed column order and float formatting), ``records.jsonl``
(full round records including anomaly reports), ``summary.json``, and a
copy of the normalized config. Output lands in ``<root>/<config-hash>/``.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .config import (
    ExperimentConfig,
    attack_spec,
    config_from_dict,
    config_hash,
    config_to_dict,
    resolve_baselines,
)
from .data import generate_synthetic_dataset, load_image_dataset, train_test_split
from .detector import AutoencoderConfig
from .federation import (
    Federation,
    FederationConfig,
    RoundRecord,
    assign_attackers,
    partition_non_iid,
)
from .rng import derive_rng
from .surrogate import build_spec

OUTPUT_ROOT_ENV = "FEDDETECT_OUTPUT_ROOT"

ATTACK_GRID = ("sign_flip", "additive_noise", "gradient_ascent")

ROUNDS_CSV_HEADER = "round,method,attack,accuracy,loss,precision,recall,config_hash"

ACCURACY_TARGETS = (0.5, 0.7, 0.8, 0.9)


@dataclass
class ExperimentSummary:
    config_hash: str
    method: str
    attack: str
    total_rounds: int
    final_accuracy: float
    final_loss: float
    mean_detection_precision: float | None
    mean_detection_recall: float | None
    rounds_to_accuracy: dict = field(default_factory=dict)
    fallback_rounds: int = 0
    wall_clock_seconds: float = 0.0
    run_dir: str = ""


# -- construction ----------------------------------------------------------

def build_dataset(cfg: ExperimentConfig):
    """(train_x, train_y, test_x, test_y, n_classes), all seed-derived."""
    ds = cfg.dataset
    if ds.kind == "synthetic":
        features, labels = generate_synthetic_dataset(
            ds.classes, ds.samples, ds.input_dim,
            derive_rng(cfg.master_seed, "data"), noise_std=ds.noise_std,
        )
        classes = ds.classes
    else:
        features, labels, classes = load_image_dataset(ds.path)
    train_x, train_y, test_x, test_y = train_test_split(
        features, labels, ds.test_fraction, derive_rng(cfg.master_seed, "split"),
    )
    return train_x, train_y, test_x, test_y, classes


def model_layers(cfg: ExperimentConfig, input_dim: int, classes: int):
    dims = [input_dim, *cfg.model.hidden_sizes]
    layers = [nn.LayerSpec(a, b, "relu") for a, b in zip(dims[:-1], dims[1:])]
    layers.append(nn.LayerSpec(dims[-1], classes, "softmax"))
    return tuple(layers)


def build_surrogate_spec(cfg: ExperimentConfig, layers):
    """Freeze the detector's projection; target_dim is clamped to the
    source range so small desk-scale models stay valid."""
    layout, total = nn.layer_layout(layers)
    source_layer = cfg.surrogate.source_layer
    if cfg.surrogate.mode == "layer_slice":
        if source_layer is None:
            source_layer = max(len(layers) - 2, 0)
        if source_layer >= len(layers):
            raise ValueError(
                f"surrogate.source_layer {source_layer} out of range for "
                f"{len(layers)} layers"
            )
        span = layout[source_layer][1]
    else:
        source_layer = None
        span = total
    target = min(cfg.surrogate.target_dim, span)
    return build_spec(layout, total, cfg.surrogate.mode, target, source_layer,
                      derive_rng(cfg.master_seed, "surrogate"))


def build_federation(cfg: ExperimentConfig) -> Federation:
    train_x, train_y, test_x, test_y, classes = build_dataset(cfg)
    fed = cfg.federation
    clients = partition_non_iid(train_x, train_y, fed.total_clients,
                                fed.dirichlet_concentration,
                                derive_rng(cfg.master_seed, "partition"))
    clients = assign_attackers(clients, fed.abnormal_fraction, attack_spec(cfg),
                               derive_rng(cfg.master_seed, "attackers"))
    layers = model_layers(cfg, train_x.shape[1], classes)
    train_cfg = nn.TrainConfig(
        learning_rate=cfg.training.learning_rate,
        batch_size=cfg.training.batch_size,
        epochs=cfg.training.epochs,
        dropout_rate=cfg.training.dropout_rate,
    )
    fed_cfg = FederationConfig(
        total_clients=fed.total_clients,
        clients_per_round=fed.clients_per_round,
        rounds=fed.rounds,
        warmup_rounds=fed.warmup_rounds,
        abnormal_fraction=fed.abnormal_fraction,
        aggregation_method=fed.aggregation_method,
        train_cfg=train_cfg,
        master_seed=cfg.master_seed,
        dirichlet_concentration=fed.dirichlet_concentration,
        allow_attacks_in_warmup=fed.allow_attacks_in_warmup,
    )
    ae = cfg.autoencoder
    return Federation(
        fed_cfg, clients, layers, test_x, test_y,
        surrogate_spec=build_surrogate_spec(cfg, layers),
        standardize_surrogates=cfg.surrogate.standardize,
        autoencoder_cfg=AutoencoderConfig(
            hidden_sizes=ae.hidden_sizes,
            batch_size=ae.batch_size,
            dropout_rate=ae.dropout_rate,
            epochs=ae.epochs,
            learning_rate=ae.learning_rate,
        ),
        credit_exponent=cfg.detector.credit_exponent,
        threshold_rule=cfg.detector.threshold_rule,
        paper_exact_thresholding=cfg.detector.paper_exact_thresholding,
        retrain_every=cfg.autoencoder.retrain_every,
        baselines=resolve_baselines(cfg),
    )


# -- persistence -----------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def write_rounds_csv(path: Path, records: list[RoundRecord], run_hash: str) -> None:
    lines = [ROUNDS_CSV_HEADER]
    for r in records:
        lines.append(",".join([
            str(r.round_index), r.method, r.attack,
            _fmt(r.global_accuracy), _fmt(r.global_loss),
            _fmt(r.detection_precision), _fmt(r.detection_recall), run_hash,
        ]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_records_jsonl(path: Path, records: list[RoundRecord], run_hash: str) -> None:
    with open(path, "w", newline="\n") as fh:
        for r in records:
            row = r.to_dict()
            row["config_hash"] = run_hash
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def resolve_output_root(cfg: ExperimentConfig, override=None) -> Path:
    """Explicit override > FEDDETECT_OUTPUT_ROOT env var > config value."""
    root = override or os.environ.get(OUTPUT_ROOT_ENV) or cfg.output_dir
    return Path(root)


# -- execution ---------------------------------------------------------------

def run_experiment(cfg: ExperimentConfig, output_root=None) -> ExperimentSummary:
    """Warm-up plus attack rounds; returns the summary and persists one
    record per round under <root>/<config-hash>/."""
    started = time.perf_counter()
    run_hash = config_hash(cfg)
    federation = build_federation(cfg)
    weights = federation.initial_weights()
    records: list[RoundRecord] = []
    for round_index in range(cfg.federation.warmup_rounds + cfg.federation.rounds):
        weights, record = federation.run_round(weights, round_index)
        records.append(record)

    if records:
        final_accuracy = records[-1].global_accuracy
        final_loss = records[-1].global_loss
    else:
        final_accuracy, final_loss = nn.evaluate_classifier(
            nn.with_params(federation.template, weights),
            federation.test_features, federation.test_labels,
        )
    precisions = [r.detection_precision for r in records if r.detection_precision is not None]
    recalls = [r.detection_recall for r in records if r.detection_recall is not None]
    rounds_to = {
        _fmt(target): next(
            (r.round_index for r in records if r.global_accuracy >= target), None,
        )
        for target in ACCURACY_TARGETS
    }
    run_dir = resolve_output_root(cfg, output_root) / run_hash
    summary = ExperimentSummary(
        config_hash=run_hash,
        method=cfg.federation.aggregation_method,
        attack=cfg.attack.kind if cfg.federation.abnormal_fraction > 0 else "none",
        total_rounds=len(records),
        final_accuracy=final_accuracy,
        final_loss=final_loss,
        mean_detection_precision=float(np.mean(precisions)) if precisions else None,
        mean_detection_recall=float(np.mean(recalls)) if recalls else None,
        rounds_to_accuracy=rounds_to,
        fallback_rounds=sum(1 for r in records if r.fallback),
        wall_clock_seconds=time.perf_counter() - started,
        run_dir=str(run_dir),
    )

    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "config.json", "w", newline="\n") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_rounds_csv(run_dir / "rounds.csv", records, run_hash)
    write_records_jsonl(run_dir / "records.jsonl", records, run_hash)
    with open(run_dir / "summary.json", "w", newline="\n") as fh:
        json.dump(asdict(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def derive_cell_config(cfg: ExperimentConfig, method: str | None = None,
                       attack: str | None = None,
                       abnormal_fraction: float | None = None) -> ExperimentConfig:
    """Re-validate a config with one grid cell's method/attack swapped in."""
    raw = config_to_dict(cfg)
    if method is not None:
        raw["federation"]["aggregation_method"] = method
    if attack is not None:
        raw["attack"]["kind"] = attack
    if abnormal_fraction is not None:
        raw["federation"]["abnormal_fraction"] = abnormal_fraction
    return config_from_dict(raw)


def compare_methods(cfg: ExperimentConfig, methods, attacks=ATTACK_GRID,
                    output_root=None, include_clean_reference=True):
    """Run every method against every attack with identical seeds and
    partitions; returns table rows and writes ``comparison-<hash>.csv``.

    The clean reference row (fedavg, no attackers, same seed) is included
    so detection methods can be compared against the unattacked baseline.
    """
    rows = []
    cells: list[ExperimentConfig] = []
    if include_clean_reference:
        cells.append(derive_cell_config(cfg, method="fedavg", abnormal_fraction=0.0))
    for attack in attacks:
        for method in methods:
            cells.append(derive_cell_config(cfg, method=method, attack=attack))
    for cell in cells:
        summary = run_experiment(cell, output_root=output_root)
        rows.append({
            "method": summary.method,
            "attack": summary.attack,
            "final_accuracy": summary.final_accuracy,
            "final_loss": summary.final_loss,
            "mean_precision": summary.mean_detection_precision,
            "mean_recall": summary.mean_detection_recall,
            "fallback_rounds": summary.fallback_rounds,
            "config_hash": summary.config_hash,
            "run_dir": summary.run_dir,
        })
    root = resolve_output_root(cfg, output_root)
    root.mkdir(parents=True, exist_ok=True)
    table_path = root / f"comparison-{config_hash(cfg)}.csv"
    header = ["method", "attack", "final_accuracy", "final_loss",
              "mean_precision", "mean_recall", "fallback_rounds", "config_hash"]
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(row[key]) for key in header))
    with open(table_path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return rows, table_path
