"""Shapelet knowledge structures with joint embeddings for early detection.

The pipeline: discover shapelet concepts per vital-sign channel, assemble
in-channel transition structures and a cross-channel co-occurrence
structure, embed both jointly with ranking-inferred correlation strengths,
summarize each series by its occurred triplets, and monitor streams for
early class-transition detection.
"""

from .config import (
    DetectionConfig,
    PipelineConfig,
    StructureConfig,
    TrainConfig,
    desk_config,
    load_config,
)
from .detection import (
    EvaluationResult,
    MetricsReport,
    MonitorState,
    apache_level,
    auc_score,
    composite,
    earliness,
    evaluate,
    monitor_series,
    monitor_step,
    prune_training,
    reevaluate,
)
from .errors import (
    ArtifactError,
    ConfigurationError,
    DataError,
    FitError,
    InvalidArgumentError,
    StreamError,
    TrainingError,
    VitalksError,
)
from .pipeline import PipelineModel, featurize, fit_pipeline
from .series import (
    Assignment,
    MeasurementSet,
    Shapelet,
    ShapeletDictionary,
    TimeSeries,
    assign_concepts,
    combined_distance,
    discover_shapelets,
    dtw_distance,
    load_series_csv,
    write_series_csv,
)
from .structures import CrossKS, DomainKS, GapRelations, TransitionStats
from .synth import SynthConfig, generate, oracle_checks
from .training import TrainResult, load_model, save_model, train

__version__ = "0.1.0"

__all__ = [
    "ArtifactError",
    "Assignment",
    "ConfigurationError",
    "CrossKS",
    "DataError",
    "DetectionConfig",
    "DomainKS",
    "EvaluationResult",
    "FitError",
    "GapRelations",
    "InvalidArgumentError",
    "MeasurementSet",
    "MetricsReport",
    "MonitorState",
    "PipelineConfig",
    "PipelineModel",
    "Shapelet",
    "ShapeletDictionary",
    "StreamError",
    "StructureConfig",
    "SynthConfig",
    "TimeSeries",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "TransitionStats",
    "VitalksError",
    "apache_level",
    "assign_concepts",
    "auc_score",
    "combined_distance",
    "composite",
    "desk_config",
    "discover_shapelets",
    "dtw_distance",
    "earliness",
    "evaluate",
    "featurize",
    "fit_pipeline",
    "generate",
    "load_config",
    "load_model",
    "load_series_csv",
    "monitor_series",
    "monitor_step",
    "oracle_checks",
    "prune_training",
    "reevaluate",
    "save_model",
    "train",
    "write_series_csv",
]
