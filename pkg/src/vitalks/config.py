"""Configuration dataclasses and JSON round-trip helpers.

Every tunable in the pipeline lives in one of the section dataclasses below
(synthetic-data settings live in :mod:`vitalks.synth`).  Defaults follow the
reference operating point; :func:`desk_config` switches the handful of values
that make a full run finish on a desktop in minutes.

Config files are JSON objects with one key per section.  Unknown keys are
rejected so typos fail fast instead of silently falling back to defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from .errors import ConfigurationError

CHANNELS = ("X1", "X2")


@dataclass
class StructureConfig:
    """Shapelet discovery, concept assignment, and structure building."""

    shapelet_counts: dict[str, int] = field(
        default_factory=lambda: {"X1": 60, "X2": 80}
    )
    shapelet_length: int = 15
    # assignment keeps concepts scoring >= threshold among the top_k nearest
    assignment_threshold: float = 0.7
    assignment_top_k: int = 3
    max_candidates: int = 50000
    kmeans_iterations: int = 50
    # upper bounds of the first interval relations; the last relation is open
    relation_bounds: tuple[float, ...] = (30.0, 60.0, 90.0)
    correlation_bins: int = 5

    def n_relations(self) -> int:
        return len(self.relation_bounds) + 1


@dataclass
class TrainConfig:
    """Joint embedding training settings."""

    embedding_dim: int = 256
    epochs: int = 500
    margin: float = 4.0                 # base triplet margin
    margin_scale: float = 0.1           # exponent scale of the dynamic margin
    context_weight: float = 1.0         # weight of contextual triplet losses
    loss_balance: float = 0.5           # scales the cross-structure update rate
    learning_rate: float = 1e-3
    negatives: int = 10
    adversarial_temperature: float = 1.0
    walk_count: int = 20
    walk_length: int = 7
    max_path_length: int = 7
    exploration_bias: float = 4.0       # must stay > 1
    mf_dim: int = 32
    rank_threshold: float = 0.05
    bpr_learning_rate: float = 0.05
    bpr_regularization: float = 0.01
    strength_softmax_scope: str = "all"  # "all" or "per_correlation"
    seed: int = 7

    def validate(self) -> None:
        if self.exploration_bias <= 1.0:
            raise ConfigurationError("exploration_bias must be greater than 1")
        if self.strength_softmax_scope not in ("all", "per_correlation"):
            raise ConfigurationError(
                "strength_softmax_scope must be 'all' or 'per_correlation', "
                f"got {self.strength_softmax_scope!r}"
            )
        if self.embedding_dim < 1 or self.epochs < 0:
            raise ConfigurationError("embedding_dim and epochs must be positive")
        if self.negatives < 1:
            raise ConfigurationError("negatives must be at least 1")


@dataclass
class DetectionConfig:
    """Streaming detection and evaluation settings."""

    window_minutes: int = 30
    threshold: float = 0.5
    delay_fraction: float = 0.0         # suppress decisions until this share of T
    classifier: str = "logistic"
    folds: int = 3
    decay: float = 0.8                  # recency decay of triplet importance
    prefix_training: bool = True        # train the classifier on prefix features too

    def validate(self) -> None:
        if self.window_minutes <= 0:
            raise ConfigurationError("window_minutes must be positive")
        if not 0.0 <= self.delay_fraction < 1.0:
            raise ConfigurationError("delay_fraction must lie in [0, 1)")
        if not 0.0 < self.decay <= 1.0:
            raise ConfigurationError("decay must lie in (0, 1]")
        if self.classifier not in ("logistic", "gbdt"):
            raise ConfigurationError(
                f"classifier must be 'logistic' or 'gbdt', got {self.classifier!r}"
            )


def _from_mapping(cls: type, data: Mapping[str, Any], where: str) -> Any:
    """Build a dataclass from a mapping, rejecting unknown keys."""
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"unknown {where} keys: {', '.join(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if isinstance(value, list):
            value = _tuplify(value)
        kwargs[f.name] = value
    return cls(**kwargs)


def _tuplify(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def _to_jsonable(value: Any) -> Any:
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {
            f.name: _to_jsonable(getattr(value, f.name))
            for f in dataclasses.fields(value)
        }
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    return value


@dataclass
class PipelineConfig:
    """Top-level configuration grouping all sections plus the global seed."""

    structure: StructureConfig = field(default_factory=StructureConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    synth: "Any" = None                 # SynthConfig; filled in __post_init__
    seed: int = 7
    threads: int = 1

    def __post_init__(self) -> None:
        if self.synth is None:
            from .synth import SynthConfig

            self.synth = SynthConfig()

    def validate(self) -> None:
        self.train.validate()
        self.detection.validate()
        self.synth.validate()
        if self.threads < 1:
            raise ConfigurationError("threads must be at least 1")

    def to_dict(self) -> dict[str, Any]:
        return _to_jsonable(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PipelineConfig":
        from .synth import SynthConfig

        if not isinstance(data, Mapping):
            raise ConfigurationError("config root must be a JSON object")
        known = {"structure", "train", "detection", "synth", "seed", "threads"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown config sections: {', '.join(unknown)}")
        cfg = cls(
            structure=_from_mapping(
                StructureConfig, data.get("structure", {}), "structure"
            ),
            train=_from_mapping(TrainConfig, data.get("train", {}), "train"),
            detection=_from_mapping(
                DetectionConfig, data.get("detection", {}), "detection"
            ),
            synth=_from_mapping(SynthConfig, data.get("synth", {}), "synth"),
            seed=int(data.get("seed", 7)),
            threads=int(data.get("threads", 1)),
        )
        if "shapelet_counts" in data.get("structure", {}):
            cfg.structure.shapelet_counts = dict(data["structure"]["shapelet_counts"])
        cfg.validate()
        return cfg

    def apply_seed(self, seed: int) -> None:
        """Set one master seed for every stage."""
        self.seed = int(seed)
        self.train.seed = int(seed)
        self.synth.seed = int(seed)


def load_config(path: str) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}")
    return PipelineConfig.from_dict(data)


def desk_config(seed: int = 7) -> PipelineConfig:
    """Desktop-scale settings: small embeddings, short paths, fast epochs."""
    cfg = PipelineConfig()
    cfg.structure.shapelet_counts = {"X1": 12, "X2": 12}
    cfg.train.embedding_dim = 32
    cfg.train.epochs = 300
    cfg.train.max_path_length = 3
    # absorbing halt compounds per-window false-positive risk over 16 windows,
    # so the desk profile trades a little detection delay for precision
    cfg.detection.threshold = 0.65
    cfg.apply_seed(seed)
    return cfg
