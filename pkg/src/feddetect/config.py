"""Experiment configuration: schema, validation, normalization, hashing.

Configs are human-editable YAML or JSON. Every field has a default except
``master_seed``; unknown keys are rejected, and validation errors name the
offending field path. The canonical serialized form (sorted JSON) is
hashed to key output directories and stamped on every round record.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .aggregation import BaselineParams
from .attacks import ATTACK_KINDS, AttackSpec
from .federation import AGGREGATION_METHODS, DETECTOR_METHODS


class ConfigError(ValueError):
    """Invalid configuration; message starts with the field path."""


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"          # synthetic | image_file
    classes: int = 5
    samples: int = 4000
    input_dim: int = 32
    noise_std: float = 1.0
    test_fraction: float = 0.25
    path: str | None = None


@dataclass(frozen=True)
class ModelConfig:
    hidden_sizes: tuple[int, ...] = (64, 32)


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.06
    batch_size: int = 16
    epochs: int = 20
    dropout_rate: float = 0.0


@dataclass(frozen=True)
class FederationSection:
    total_clients: int = 60
    clients_per_round: int = 20
    rounds: int = 100
    warmup_rounds: int = 10
    abnormal_fraction: float = 0.3
    aggregation_method: str = "thresholding"
    dirichlet_concentration: float = 0.5
    allow_attacks_in_warmup: bool = False


@dataclass(frozen=True)
class AttackSection:
    kind: str = "sign_flip"
    noise_std: float = 1.0           # additive_noise only


@dataclass(frozen=True)
class SurrogateSection:
    mode: str = "layer_slice"
    target_dim: int = 3000           # clamped to the source range at runtime
    source_layer: int | None = None  # None = last hidden layer
    standardize: bool = True


@dataclass(frozen=True)
class AutoencoderSection:
    hidden_sizes: tuple[int, ...] = (64, 32, 32, 64)
    batch_size: int = 32
    dropout_rate: float = 0.2
    epochs: int = 200
    learning_rate: float = 0.01
    retrain_every: int = 0           # 0 = train once after warm-up


@dataclass(frozen=True)
class DetectorSection:
    credit_exponent: float = 2.0
    threshold_rule: str | float = "mean"   # mean | median | explicit value >= 1
    paper_exact_thresholding: bool = False


@dataclass(frozen=True)
class BaselineSection:
    krum_assumed_attackers: int | None = None   # None = ceil(fraction * K)
    trim_fraction: float | None = None          # None = abnormal fraction
    geomed_tol: float = 1e-6
    geomed_max_iters: int = 100


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    federation: FederationSection = field(default_factory=FederationSection)
    attack: AttackSection = field(default_factory=AttackSection)
    surrogate: SurrogateSection = field(default_factory=SurrogateSection)
    autoencoder: AutoencoderSection = field(default_factory=AutoencoderSection)
    detector: DetectorSection = field(default_factory=DetectorSection)
    baselines: BaselineSection = field(default_factory=BaselineSection)
    output_dir: str = "runs"


_SECTION_TYPES = {
    "dataset": DatasetConfig,
    "model": ModelConfig,
    "training": TrainingConfig,
    "federation": FederationSection,
    "attack": AttackSection,
    "surrogate": SurrogateSection,
    "autoencoder": AutoencoderSection,
    "detector": DetectorSection,
    "baselines": BaselineSection,
}


# -- field coercion ------------------------------------------------------

def _fail(path: str, message: str):
    raise ConfigError(f"{path}: {message}")


def _as_int(path, value, minimum=None, maximum=None, optional=False):
    if value is None and optional:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        _fail(path, f"must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        _fail(path, f"must be <= {maximum}, got {value}")
    return int(value)


def _as_float(path, value, minimum=None, below=None, optional=False,
              exclusive_minimum=None):
    if value is None and optional:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        _fail(path, f"must be finite, got {value}")
    if minimum is not None and value < minimum:
        _fail(path, f"must be >= {minimum}, got {value}")
    if exclusive_minimum is not None and value <= exclusive_minimum:
        _fail(path, f"must be > {exclusive_minimum}, got {value}")
    if below is not None and value >= below:
        _fail(path, f"must be < {below}, got {value}")
    return value


def _as_bool(path, value):
    if not isinstance(value, bool):
        _fail(path, f"expected a boolean, got {value!r}")
    return value


def _as_choice(path, value, choices):
    if value not in choices:
        _fail(path, f"expected one of {list(choices)}, got {value!r}")
    return value


def _as_int_tuple(path, value, minimum=1):
    if not isinstance(value, (list, tuple)) or not value:
        _fail(path, f"expected a non-empty list of integers, got {value!r}")
    out = []
    for i, item in enumerate(value):
        out.append(_as_int(f"{path}[{i}]", item, minimum=minimum))
    return tuple(out)


def _section_dict(raw, name, defaults) -> dict:
    value = raw.get(name)
    if value is None:
        return {}
    if not isinstance(value, dict):
        _fail(name, f"expected a mapping, got {value!r}")
    known = set(asdict(defaults))
    for key in value:
        if key not in known:
            _fail(f"{name}.{key}", "unknown key")
    return value


# -- section parsers -----------------------------------------------------

def _parse_dataset(raw) -> DatasetConfig:
    d = _section_dict(raw, "dataset", DatasetConfig())
    out = DatasetConfig(
        kind=_as_choice("dataset.kind", d.get("kind", "synthetic"),
                        ("synthetic", "image_file")),
        classes=_as_int("dataset.classes", d.get("classes", 5), minimum=2),
        samples=_as_int("dataset.samples", d.get("samples", 4000), minimum=2),
        input_dim=_as_int("dataset.input_dim", d.get("input_dim", 32), minimum=1),
        noise_std=_as_float("dataset.noise_std", d.get("noise_std", 1.0), minimum=0.0),
        test_fraction=_as_float("dataset.test_fraction", d.get("test_fraction", 0.25),
                                exclusive_minimum=0.0, below=1.0),
        path=d.get("path"),
    )
    if out.kind == "image_file":
        if not out.path or not isinstance(out.path, str):
            _fail("dataset.path", "required for kind=image_file")
    elif out.path is not None:
        _fail("dataset.path", "only valid for kind=image_file")
    return out


def _parse_model(raw) -> ModelConfig:
    d = _section_dict(raw, "model", ModelConfig())
    return ModelConfig(
        hidden_sizes=_as_int_tuple("model.hidden_sizes", d.get("hidden_sizes", [64, 32])),
    )


def _parse_training(raw) -> TrainingConfig:
    d = _section_dict(raw, "training", TrainingConfig())
    return TrainingConfig(
        learning_rate=_as_float("training.learning_rate", d.get("learning_rate", 0.06),
                                exclusive_minimum=0.0),
        batch_size=_as_int("training.batch_size", d.get("batch_size", 16), minimum=1),
        epochs=_as_int("training.epochs", d.get("epochs", 20), minimum=1),
        dropout_rate=_as_float("training.dropout_rate", d.get("dropout_rate", 0.0),
                               minimum=0.0, below=1.0),
    )


def _parse_federation(raw) -> FederationSection:
    d = _section_dict(raw, "federation", FederationSection())
    return FederationSection(
        total_clients=_as_int("federation.total_clients", d.get("total_clients", 60), minimum=1),
        clients_per_round=_as_int("federation.clients_per_round",
                                  d.get("clients_per_round", 20), minimum=1),
        rounds=_as_int("federation.rounds", d.get("rounds", 100), minimum=0),
        warmup_rounds=_as_int("federation.warmup_rounds", d.get("warmup_rounds", 10), minimum=0),
        abnormal_fraction=_as_float("federation.abnormal_fraction",
                                    d.get("abnormal_fraction", 0.3), minimum=0.0, below=1.0),
        aggregation_method=_as_choice("federation.aggregation_method",
                                      d.get("aggregation_method", "thresholding"),
                                      AGGREGATION_METHODS),
        dirichlet_concentration=_as_float("federation.dirichlet_concentration",
                                          d.get("dirichlet_concentration", 0.5),
                                          exclusive_minimum=0.0),
        allow_attacks_in_warmup=_as_bool("federation.allow_attacks_in_warmup",
                                         d.get("allow_attacks_in_warmup", False)),
    )


def _parse_attack(raw) -> AttackSection:
    d = _section_dict(raw, "attack", AttackSection())
    return AttackSection(
        kind=_as_choice("attack.kind", d.get("kind", "sign_flip"), ATTACK_KINDS),
        noise_std=_as_float("attack.noise_std", d.get("noise_std", 1.0),
                            exclusive_minimum=0.0),
    )


def _parse_surrogate(raw) -> SurrogateSection:
    d = _section_dict(raw, "surrogate", SurrogateSection())
    return SurrogateSection(
        mode=_as_choice("surrogate.mode", d.get("mode", "layer_slice"),
                        ("layer_slice", "random_indices")),
        target_dim=_as_int("surrogate.target_dim", d.get("target_dim", 3000), minimum=1),
        source_layer=_as_int("surrogate.source_layer", d.get("source_layer"),
                             minimum=0, optional=True),
        standardize=_as_bool("surrogate.standardize", d.get("standardize", True)),
    )


def _parse_autoencoder(raw) -> AutoencoderSection:
    d = _section_dict(raw, "autoencoder", AutoencoderSection())
    return AutoencoderSection(
        hidden_sizes=_as_int_tuple("autoencoder.hidden_sizes",
                                   d.get("hidden_sizes", [64, 32, 32, 64])),
        batch_size=_as_int("autoencoder.batch_size", d.get("batch_size", 32), minimum=1),
        dropout_rate=_as_float("autoencoder.dropout_rate", d.get("dropout_rate", 0.2),
                               minimum=0.0, below=1.0),
        epochs=_as_int("autoencoder.epochs", d.get("epochs", 200), minimum=1),
        learning_rate=_as_float("autoencoder.learning_rate", d.get("learning_rate", 0.01),
                                exclusive_minimum=0.0),
        retrain_every=_as_int("autoencoder.retrain_every", d.get("retrain_every", 0), minimum=0),
    )


def _parse_detector(raw) -> DetectorSection:
    d = _section_dict(raw, "detector", DetectorSection())
    rule = d.get("threshold_rule", "mean")
    if isinstance(rule, str):
        rule = _as_choice("detector.threshold_rule", rule, ("mean", "median"))
    else:
        rule = _as_float("detector.threshold_rule", rule, minimum=1.0)
    return DetectorSection(
        credit_exponent=_as_float("detector.credit_exponent",
                                  d.get("credit_exponent", 2.0), minimum=0.0),
        threshold_rule=rule,
        paper_exact_thresholding=_as_bool("detector.paper_exact_thresholding",
                                          d.get("paper_exact_thresholding", False)),
    )


def _parse_baselines(raw) -> BaselineSection:
    d = _section_dict(raw, "baselines", BaselineSection())
    return BaselineSection(
        krum_assumed_attackers=_as_int("baselines.krum_assumed_attackers",
                                       d.get("krum_assumed_attackers"),
                                       minimum=0, optional=True),
        trim_fraction=_as_float("baselines.trim_fraction", d.get("trim_fraction"),
                                minimum=0.0, below=0.5, optional=True),
        geomed_tol=_as_float("baselines.geomed_tol", d.get("geomed_tol", 1e-6),
                             exclusive_minimum=0.0),
        geomed_max_iters=_as_int("baselines.geomed_max_iters",
                                 d.get("geomed_max_iters", 100), minimum=1),
    )


# -- cross-field validation ----------------------------------------------

def resolve_baselines(cfg: ExperimentConfig) -> BaselineParams:
    """Fill derived baseline defaults: the assumed attacker fraction
    matches the true fraction (the most favorable setting)."""
    fed = cfg.federation
    krum_f = cfg.baselines.krum_assumed_attackers
    if krum_f is None:
        krum_f = math.ceil(fed.abnormal_fraction * fed.clients_per_round)
    trim = cfg.baselines.trim_fraction
    if trim is None:
        trim = fed.abnormal_fraction if fed.abnormal_fraction < 0.5 else 0.3
    return BaselineParams(
        krum_assumed_attackers=krum_f,
        trim_fraction=trim,
        geomed_tol=cfg.baselines.geomed_tol,
        geomed_max_iters=cfg.baselines.geomed_max_iters,
    )


def attack_spec(cfg: ExperimentConfig) -> AttackSpec | None:
    if cfg.federation.abnormal_fraction <= 0:
        return None
    if cfg.attack.kind == "additive_noise":
        return AttackSpec("additive_noise", noise_std=cfg.attack.noise_std)
    return AttackSpec(cfg.attack.kind)


def _validate_cross(cfg: ExperimentConfig) -> None:
    fed = cfg.federation
    if fed.clients_per_round > fed.total_clients:
        _fail("federation.clients_per_round",
              f"{fed.clients_per_round} exceeds total_clients {fed.total_clients}")
    designated = int(fed.abnormal_fraction * fed.total_clients)
    quota = int(fed.abnormal_fraction * fed.clients_per_round)
    if fed.abnormal_fraction > 0 and quota > 0 and designated < quota:
        _fail("federation.abnormal_fraction",
              f"designates only {designated} attackers but each round needs {quota}")
    honest = fed.total_clients - (designated if fed.abnormal_fraction > 0 else 0)
    if (fed.warmup_rounds > 0 and not fed.allow_attacks_in_warmup
            and honest < fed.clients_per_round):
        _fail("federation.warmup_rounds",
              f"warm-up needs {fed.clients_per_round} honest clients "
              f"but only {honest} exist")
    if honest < fed.clients_per_round - quota:
        _fail("federation.total_clients",
              f"attack rounds need {fed.clients_per_round - quota} honest clients "
              f"but only {honest} exist")
    method = fed.aggregation_method
    if method in DETECTOR_METHODS and fed.rounds > 0:
        if fed.warmup_rounds * fed.clients_per_round < 2:
            _fail("federation.warmup_rounds",
                  "detector methods need warm-up rounds accumulating at least "
                  "2 surrogates before detection starts")
    params = resolve_baselines(cfg)
    if method == "krum" and fed.clients_per_round < params.krum_assumed_attackers + 3:
        _fail("baselines.krum_assumed_attackers",
              f"krum needs clients_per_round >= {params.krum_assumed_attackers + 3}")
    if method == "trimmed_mean" and 2 * int(params.trim_fraction * fed.clients_per_round) \
            >= fed.clients_per_round:
        _fail("baselines.trim_fraction",
              "trimming removes every value at this clients_per_round")
    if cfg.dataset.kind == "synthetic":
        n_test = max(1, int(round(cfg.dataset.samples * cfg.dataset.test_fraction)))
        if cfg.dataset.samples - n_test < fed.total_clients:
            _fail("dataset.samples",
                  f"{cfg.dataset.samples} samples leave fewer training points "
                  f"than {fed.total_clients} clients after the test split")


# -- public API ------------------------------------------------------------

def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"config root: expected a mapping, got {type(raw).__name__}")
    known = set(_SECTION_TYPES) | {"master_seed", "output_dir"}
    for key in raw:
        if key not in known:
            _fail(key, "unknown key")
    if "master_seed" not in raw:
        _fail("master_seed", "required")
    seed = raw["master_seed"]
    if isinstance(seed, bool) or not isinstance(seed, int):
        _fail("master_seed", f"expected an integer, got {seed!r}")
    output_dir = raw.get("output_dir", "runs")
    if not isinstance(output_dir, str) or not output_dir:
        _fail("output_dir", f"expected a non-empty string, got {output_dir!r}")
    cfg = ExperimentConfig(
        master_seed=int(seed),
        dataset=_parse_dataset(raw),
        model=_parse_model(raw),
        training=_parse_training(raw),
        federation=_parse_federation(raw),
        attack=_parse_attack(raw),
        surrogate=_parse_surrogate(raw),
        autoencoder=_parse_autoencoder(raw),
        detector=_parse_detector(raw),
        baselines=_parse_baselines(raw),
        output_dir=output_dir,
    )
    _validate_cross(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    """Parse and validate a YAML/JSON config file."""
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    if raw is None:
        raw = {}
    return config_from_dict(raw)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Canonical plain-dict form (tuples become lists)."""
    out = asdict(cfg)

    def canonical(value):
        if isinstance(value, tuple):
            return [canonical(v) for v in value]
        if isinstance(value, dict):
            return {k: canonical(v) for k, v in value.items()}
        return value

    return canonical(out)


def config_hash(cfg: ExperimentConfig) -> str:
    payload = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def apply_overrides(raw: dict, assignments) -> dict:
    """Apply CLI ``section.key=value`` overrides onto a raw config dict."""
    out = json.loads(json.dumps(raw))  # deep copy of plain data
    for assignment in assignments:
        if "=" not in assignment:
            raise ConfigError(f"override {assignment!r}: expected key.path=value")
        dotted, text = assignment.split("=", 1)
        keys = [k for k in dotted.strip().split(".") if k]
        if not keys:
            raise ConfigError(f"override {assignment!r}: empty key path")
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {assignment!r}: bad value: {exc}") from exc
        node = out
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {assignment!r}: {key} is not a section")
        node[keys[-1]] = value
    return out
