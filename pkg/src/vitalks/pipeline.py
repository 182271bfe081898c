"""End-to-end orchestration from raw series to trained model and features."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .config import PipelineConfig, StructureConfig
from .embedding import EmbeddingStore
from .errors import ConfigurationError, DataError
from .representation import full_representation
from .series import (
    Assignment,
    MeasurementSet,
    ShapeletDictionary,
    assignments_from_distances,
    discover_shapelets,
    distance_matrix,
    subsequences,
)
from .strength import MFParams, StrengthTable
from .structures import (
    CrossKS,
    DomainKS,
    TransitionStats,
    build_cross_ks,
    build_domain_ks,
    concept_sets,
    cooccurrence_likelihood,
    transition_probabilities,
)
from .training import TrainResult, train

log = logging.getLogger(__name__)


@dataclass
class PipelineModel:
    dictionaries: dict[str, ShapeletDictionary]
    domain: dict[str, DomainKS]
    transitions: dict[str, TransitionStats]
    cross: CrossKS
    store: EmbeddingStore
    mf: MFParams | None
    strengths: StrengthTable | None
    config: PipelineConfig
    losses: list[dict[str, float]] = field(default_factory=list)
    diverged: bool = False

    @property
    def feature_width(self) -> int:
        return 6 * self.store.dim * len(self.domain)


def discover_dictionaries(
    sets: Sequence[MeasurementSet], config: PipelineConfig
) -> dict[str, ShapeletDictionary]:
    channels = sorted({ch for mset in sets for ch in mset.series})
    if not channels:
        raise DataError("no series present in any measurement set")
    out: dict[str, ShapeletDictionary] = {}
    structure = config.structure
    for i, channel in enumerate(channels):
        if channel not in structure.shapelet_counts:
            raise ConfigurationError(
                f"no shapelet count configured for channel {channel!r}"
            )
        dataset = [mset.series[channel] for mset in sets if channel in mset.series]
        seed = int(np.random.default_rng([config.seed, 21, i]).integers(2**31))
        out[channel] = discover_shapelets(
            dataset,
            count=structure.shapelet_counts[channel],
            length=structure.shapelet_length,
            seed=seed,
            max_candidates=structure.max_candidates,
            iterations=structure.kmeans_iterations,
        )
    return out


def match_dataset(
    sets: Sequence[MeasurementSet],
    dictionaries: Mapping[str, ShapeletDictionary],
    structure: StructureConfig,
) -> dict[str, dict[str, list[Assignment]]]:
    out: dict[str, dict[str, list[Assignment]]] = {}
    for mset in sets:
        per_channel: dict[str, list[Assignment]] = {}
        for channel, dictionary in dictionaries.items():
            series = mset.series.get(channel)
            if series is None:
                per_channel[channel] = []
                continue
            windows = subsequences(series.values, dictionary.length)
            distances = distance_matrix(windows, dictionary)
            per_channel[channel] = assignments_from_distances(
                distances,
                dictionary.length,
                threshold=structure.assignment_threshold,
                top_k=structure.assignment_top_k,
            )
        out[mset.set_id] = per_channel
    return out


def build_structures(
    assignments_by_set: Mapping[str, Mapping[str, Sequence[Assignment]]],
    structure: StructureConfig,
) -> tuple[dict[str, DomainKS], dict[str, TransitionStats], CrossKS]:
    channels = sorted({ch for per in assignments_by_set.values() for ch in per})
    domain: dict[str, DomainKS] = {}
    transitions: dict[str, TransitionStats] = {}
    for channel in channels:
        lists = [per.get(channel, []) for _, per in sorted(assignments_by_set.items())]
        domain[channel] = build_domain_ks(lists, channel)
        transitions[channel] = transition_probabilities(lists, channel)
    sets_concepts = concept_sets(assignments_by_set)
    likelihoods = cooccurrence_likelihood(sets_concepts, tuple(channels))
    cross = build_cross_ks(likelihoods, bins=structure.correlation_bins)
    return domain, transitions, cross


def fit_pipeline(
    sets: Sequence[MeasurementSet], config: PipelineConfig
) -> PipelineModel:
    config.validate()
    dictionaries = discover_dictionaries(sets, config)
    assignments = match_dataset(sets, dictionaries, config.structure)
    domain, transitions, cross = build_structures(assignments, config.structure)
    counts = {ch: len(d.shapelets) for ch, d in dictionaries.items()}
    result: TrainResult = train(domain, transitions, cross, counts, config.train)
    if result.diverged:
        log.warning("training stopped early after a non-finite loss")
    return PipelineModel(
        dictionaries=dictionaries,
        domain=domain,
        transitions=transitions,
        cross=cross,
        store=result.store,
        mf=result.mf,
        strengths=result.strengths,
        config=config,
        losses=result.losses,
        diverged=result.diverged,
    )


def channel_distances(
    model: PipelineModel, mset: MeasurementSet
) -> dict[str, np.ndarray]:
    """Full per-channel distance matrices of one measurement set."""
    out = {}
    for channel, dictionary in model.dictionaries.items():
        series = mset.series.get(channel)
        if series is None:
            out[channel] = np.zeros((len(dictionary.shapelets), 0))
            continue
        windows = subsequences(series.values, dictionary.length)
        out[channel] = distance_matrix(windows, dictionary)
    return out


def prefix_assignments(
    model: PipelineModel,
    distances: Mapping[str, np.ndarray],
    observed_minutes: float,
) -> dict[str, list[Assignment]]:
    """Assignments using only the windows fully inside the observed prefix."""
    structure = model.config.structure
    length = structure.shapelet_length
    out = {}
    for channel, matrix in distances.items():
        cols = min(int(observed_minutes // length), matrix.shape[1])
        out[channel] = assignments_from_distances(
            matrix[:, :cols],
            length,
            threshold=structure.assignment_threshold,
            top_k=structure.assignment_top_k,
        )
    return out


def representation_for(
    model: PipelineModel, assignments: Mapping[str, Sequence[Assignment]]
) -> np.ndarray:
    return full_representation(
        assignments, model.domain, model.store, model.config.detection.decay
    )


def monitor_window_count(model: PipelineModel, mset: MeasurementSet) -> int:
    window = model.config.detection.window_minutes
    counts = [series.values.size // window for series in mset.series.values()]
    return max(counts) if counts else 0


def featurize(
    model: PipelineModel,
    sets: Sequence[MeasurementSet],
    prefix: bool | None = None,
) -> list[tuple[str, float, np.ndarray, str]]:
    """One feature row per (set, observed monitor windows).

    With prefix augmentation off, only the full-length row per set is kept.
    """
    detection = model.config.detection
    if prefix is None:
        prefix = detection.prefix_training
    window = detection.window_minutes
    if window % model.config.structure.shapelet_length != 0:
        raise ConfigurationError(
            "window_minutes must be a multiple of shapelet_length"
        )
    rows: list[tuple[str, float, np.ndarray, str]] = []
    for mset in sets:
        distances = channel_distances(model, mset)
        total = monitor_window_count(model, mset)
        if total == 0:
            continue
        ks = range(1, total + 1) if prefix else [total]
        for k in ks:
            minutes = float(k * window)
            assignments = prefix_assignments(model, distances, minutes)
            vec = representation_for(model, assignments)
            rows.append((mset.set_id, minutes, vec, mset.label or ""))
    return rows
