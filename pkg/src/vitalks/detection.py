"""Streaming monitor with halt-on-detection and the evaluation protocol.

The monitor consumes fixed-size windows, rebuilds the series representation
from everything observed so far (distance columns are cached, so each step
only pays for its new windows), and halts once the classifier probability
clears the threshold.  Decisions are suppressed while a delayed-start
fraction of the horizon has not elapsed and while the representation carries
no structure evidence at all, so a subject never halts on an empty feature
vector.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .classifiers import fit_builtin_classifier
from .config import DetectionConfig, PipelineConfig
from .errors import DataError, InvalidArgumentError, StreamError
from .pipeline import (
    PipelineModel,
    featurize,
    fit_pipeline,
    monitor_window_count,
    prefix_assignments,
    representation_for,
)
from .series import MeasurementSet, distance_matrix, subsequences

log = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1
POSITIVE_LABEL = "deteriorating"


def earliness(total_minutes: float, detection_minute: float) -> float:
    """Fraction of the horizon saved by detecting at ``detection_minute``."""
    if total_minutes <= 0:
        raise InvalidArgumentError("total_minutes must be positive")
    if not 0 < detection_minute <= total_minutes:
        raise InvalidArgumentError(
            f"detection minute must lie in (0, {total_minutes}], got {detection_minute}"
        )
    return (total_minutes - detection_minute) / total_minutes


def composite(f1: float, earliness_score: float) -> float:
    """Arithmetic mean of F1 and earliness."""
    for name, value in (("f1", f1), ("earliness", earliness_score)):
        if not 0.0 <= value <= 1.0:
            raise InvalidArgumentError(f"{name} must lie in [0, 1], got {value}")
    return (f1 + earliness_score) / 2.0


def apache_level(score: int) -> int:
    """Severity level 1..8 from an integer score, five points per level."""
    if score < 0:
        raise InvalidArgumentError(f"score must be non-negative, got {score}")
    return min(int(score) // 5 + 1, 8)


def auc_score(scores: Sequence[float], labels: Sequence[int]) -> float | None:
    """Rank-statistic AUC with tie-averaged ranks; None if one class absent."""
    scores = np.asarray(scores, dtype="float64")
    labels = np.asarray(labels)
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype="float64")
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j < scores.size and sorted_scores[j] == sorted_scores[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + 1 + j)
        i = j
    rank_sum = float(ranks[positive].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass
class MonitorState:
    set_id: str
    window_minutes: int
    total_minutes: float
    observed_minutes: float = 0.0
    halted: bool = False
    detection_minute: float | None = None
    trace: list[dict] = field(default_factory=list)
    values: dict[str, np.ndarray] = field(default_factory=dict)
    distances: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def max_probability(self) -> float:
        return max((step["probability"] for step in self.trace), default=0.0)


def start_monitor(
    model: PipelineModel, set_id: str, total_minutes: float
) -> MonitorState:
    return MonitorState(
        set_id=set_id,
        window_minutes=model.config.detection.window_minutes,
        total_minutes=float(total_minutes),
    )


def top_strength_edges(model: PipelineModel, limit: int = 5) -> list[dict]:
    if model.strengths is None:
        return []
    rows = []
    for pair in sorted(model.strengths.pair_correlation):
        for view in ("origin", "concept", "correlation"):
            rows.append(
                {
                    "head": f"{pair[0][0]}:{pair[0][1]}",
                    "tail": f"{pair[1][0]}:{pair[1][1]}",
                    "view": view,
                    "strength": float(model.strengths.strength(pair, view)),
                }
            )
    rows.sort(key=lambda r: (-r["strength"], r["head"], r["tail"], r["view"]))
    return rows[:limit]


def _extend_distances(
    state: MonitorState, model: PipelineModel, windows: Mapping[str, np.ndarray]
) -> None:
    length = model.config.structure.shapelet_length
    for channel, chunk in windows.items():
        dictionary = model.dictionaries.get(channel)
        if dictionary is None:
            raise StreamError(f"unknown channel {channel!r} in stream")
        chunk = np.asarray(chunk, dtype="float64")
        if chunk.ndim != 1 or chunk.size != state.window_minutes:
            raise StreamError(
                f"channel {channel!r} window must hold {state.window_minutes} samples"
            )
        if not np.all(np.isfinite(chunk)):
            raise StreamError(f"channel {channel!r} window has non-finite samples")
        previous = state.values.get(channel, np.empty(0))
        combined = np.concatenate([previous, chunk])
        state.values[channel] = combined
        all_windows = subsequences(combined, length)
        cached = state.distances.get(
            channel, np.zeros((len(dictionary.shapelets), 0))
        )
        fresh = all_windows[cached.shape[1] :]
        if fresh.shape[0]:
            new_cols = distance_matrix(fresh, dictionary)
            state.distances[channel] = np.hstack([cached, new_cols])


def monitor_step(
    state: MonitorState,
    windows: Mapping[str, np.ndarray],
    model: PipelineModel,
    classifier,
    threshold: float = 0.5,
    delay_minutes: float = 0.0,
) -> MonitorState:
    """Consume one window per channel, update the probability, maybe halt."""
    if state.halted:
        raise StreamError(f"monitor for {state.set_id!r} has already halted")
    if not windows:
        raise StreamError("monitor_step requires at least one channel window")
    _extend_distances(state, model, windows)
    state.observed_minutes += state.window_minutes
    assignments = prefix_assignments(model, state.distances, state.observed_minutes)
    vec = representation_for(model, assignments)
    probability = float(classifier.predict_probability(vec[None, :])[0])
    suppressed = state.observed_minutes < delay_minutes or not np.any(vec)
    if not suppressed and probability >= threshold:
        state.halted = True
        state.detection_minute = state.observed_minutes
    fresh_from = state.observed_minutes - state.window_minutes
    matched = sorted(
        f"{channel}:{a.concept_id}"
        for channel, members in assignments.items()
        for a in members
        if a.start_minute >= fresh_from
    )
    state.trace.append(
        {
            "set_id": state.set_id,
            "t": float(state.observed_minutes),
            "probability": probability,
            "halted": state.halted,
            "matched_concepts": matched,
            "top_strength_edges": top_strength_edges(model),
        }
    )
    return state


def monitor_series(
    model: PipelineModel,
    classifier,
    mset: MeasurementSet,
    detection: DetectionConfig | None = None,
) -> MonitorState:
    """Stream a full measurement set through the monitor until halt or end."""
    detection = detection or model.config.detection
    window = detection.window_minutes
    total_windows = monitor_window_count(model, mset)
    total_minutes = float(total_windows * window)
    state = start_monitor(model, mset.set_id, total_minutes)
    state.window_minutes = window
    delay_minutes = detection.delay_fraction * total_minutes
    for k in range(total_windows):
        chunk = {}
        for channel in model.dictionaries:
            series = mset.series.get(channel)
            if series is None:
                continue
            lo, hi = k * window, (k + 1) * window
            if series.values.size >= hi:
                chunk[channel] = series.values[lo:hi]
        if not chunk:
            break
        monitor_step(
            state,
            chunk,
            model,
            classifier,
            threshold=detection.threshold,
            delay_minutes=delay_minutes,
        )
        if state.halted:
            break
    return state


def prune_training(
    sets: Sequence[MeasurementSet], fraction: float, seed: int
) -> list[MeasurementSet]:
    """Remove a seeded random share of the deteriorating sets."""
    if not 0.0 <= fraction < 1.0:
        raise InvalidArgumentError(f"fraction must lie in [0, 1), got {fraction}")
    positives = sorted(s.set_id for s in sets if s.label == POSITIVE_LABEL)
    n_remove = int(round(fraction * len(positives)))
    if n_remove == 0:
        return list(sets)
    rng = np.random.default_rng([seed, 31])
    removed = set(rng.choice(positives, size=n_remove, replace=False).tolist())
    return [s for s in sets if s.set_id not in removed]


@dataclass
class MetricsReport:
    accuracy: float
    recall: float
    precision: float
    f1: float
    auc: float | None
    earliness: float
    composite: float
    subjects: int
    detected: int

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "recall": self.recall,
            "precision": self.precision,
            "f1": self.f1,
            "auc": self.auc,
            "earliness": self.earliness,
            "composite": self.composite,
            "subjects": self.subjects,
            "detected": self.detected,
        }


@dataclass
class SubjectOutcome:
    set_id: str
    label: str
    detected: bool
    detection_minute: float | None
    total_minutes: float
    max_probability: float

    @property
    def earliness(self) -> float:
        if not self.detected or self.total_minutes <= 0:
            return 0.0
        return earliness(self.total_minutes, self.detection_minute)


@dataclass
class FoldOutcome:
    index: int
    train_ids: list[str]
    test_ids: list[str]
    model: PipelineModel | None
    classifier: object | None
    report: MetricsReport | None
    subjects: list[SubjectOutcome] = field(default_factory=list)
    skipped: bool = False


@dataclass
class EvaluationResult:
    folds: list[FoldOutcome]
    mean: MetricsReport | None

    def to_json(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "folds": [
                None if fold.skipped or fold.report is None else fold.report.to_json()
                for fold in self.folds
            ],
            "mean": None if self.mean is None else self.mean.to_json(),
            "skipped_folds": [fold.index for fold in self.folds if fold.skipped],
        }


def fold_report(subjects: Sequence[SubjectOutcome]) -> MetricsReport:
    y_true = np.array([1 if s.label == POSITIVE_LABEL else 0 for s in subjects])
    y_pred = np.array([1 if s.detected else 0 for s in subjects])
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    accuracy = float(np.mean(y_true == y_pred)) if subjects else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    ear = float(np.mean([s.earliness for s in subjects])) if subjects else 0.0
    auc = auc_score([s.max_probability for s in subjects], y_true)
    return MetricsReport(
        accuracy=accuracy,
        recall=recall,
        precision=precision,
        f1=f1,
        auc=auc,
        earliness=ear,
        composite=composite(f1, ear),
        subjects=len(subjects),
        detected=int(y_pred.sum()),
    )


def _mean_report(folds: Sequence[FoldOutcome]) -> MetricsReport | None:
    reports = [f.report for f in folds if not f.skipped and f.report is not None]
    if not reports:
        return None
    aucs = [r.auc for r in reports if r.auc is not None]
    f1 = float(np.mean([r.f1 for r in reports]))
    ear = float(np.mean([r.earliness for r in reports]))
    return MetricsReport(
        accuracy=float(np.mean([r.accuracy for r in reports])),
        recall=float(np.mean([r.recall for r in reports])),
        precision=float(np.mean([r.precision for r in reports])),
        f1=f1,
        auc=float(np.mean(aucs)) if aucs else None,
        earliness=ear,
        composite=composite(f1, ear),
        subjects=sum(r.subjects for r in reports),
        detected=sum(r.detected for r in reports),
    )


def fold_split(set_ids: Sequence[str], folds: int, seed: int) -> list[list[str]]:
    ids = sorted(set_ids)
    if folds < 2:
        raise InvalidArgumentError(f"folds must be at least 2, got {folds}")
    rng = np.random.default_rng([seed, 41])
    permuted = [ids[i] for i in rng.permutation(len(ids))]
    return [list(chunk) for chunk in np.array_split(permuted, folds)]


def _training_labels(
    train_sets: Sequence[MeasurementSet], shuffle_seed: int | None, fold: int
) -> dict[str, str]:
    labels = {s.set_id: s.label for s in train_sets}
    if shuffle_seed is None:
        return labels
    ids = sorted(labels)
    values = [labels[i] for i in ids]
    rng = np.random.default_rng([shuffle_seed, 51, fold])
    permuted = [values[i] for i in rng.permutation(len(values))]
    return dict(zip(ids, permuted))


def _monitor_fold(
    model: PipelineModel,
    classifier,
    test_sets: Sequence[MeasurementSet],
    detection: DetectionConfig,
) -> list[SubjectOutcome]:
    subjects = []
    for mset in test_sets:
        state = monitor_series(model, classifier, mset, detection)
        subjects.append(
            SubjectOutcome(
                set_id=mset.set_id,
                label=mset.label or "",
                detected=state.halted,
                detection_minute=state.detection_minute,
                total_minutes=state.total_minutes,
                max_probability=state.max_probability,
            )
        )
    return subjects


def _fit_fold_classifier(
    model: PipelineModel,
    train_sets: Sequence[MeasurementSet],
    labels: Mapping[str, str],
    config: PipelineConfig,
):
    rows = featurize(model, train_sets)
    if not rows:
        return None
    features = np.stack([row[2] for row in rows])
    y = np.array([1.0 if labels[row[0]] == POSITIVE_LABEL else 0.0 for row in rows])
    if np.unique(y).size < 2:
        return None
    return fit_builtin_classifier(
        features, y, kind=config.detection.classifier, seed=config.seed
    )


def evaluate(
    sets: Sequence[MeasurementSet],
    config: PipelineConfig,
    prune_fraction: float = 0.0,
    label_shuffle_seed: int | None = None,
    keep_models: bool = False,
) -> EvaluationResult:
    """Seeded k-fold protocol: fit on train splits, monitor the test splits."""
    config.validate()
    by_id = {s.set_id: s for s in sets}
    for mset in sets:
        if not mset.label:
            raise DataError(f"set {mset.set_id!r} has no label")
    chunks = fold_split(list(by_id), config.detection.folds, config.seed)
    folds: list[FoldOutcome] = []
    for i, test_ids in enumerate(chunks):
        test_set = set(test_ids)
        train_sets = [s for s in sets if s.set_id not in test_set]
        test_sets = [by_id[sid] for sid in test_ids]
        labels = _training_labels(train_sets, label_shuffle_seed, i)
        if prune_fraction:
            relabeled = [replace(s, label=labels[s.set_id]) for s in train_sets]
            kept = prune_training(relabeled, prune_fraction, config.seed + i)
            kept_ids = {s.set_id for s in kept}
            train_sets = [s for s in train_sets if s.set_id in kept_ids]
        outcome = FoldOutcome(
            index=i,
            train_ids=sorted(s.set_id for s in train_sets),
            test_ids=list(test_ids),
            model=None,
            classifier=None,
            report=None,
        )
        train_classes = {labels[s.set_id] for s in train_sets}
        test_classes = {by_id[sid].label for sid in test_ids}
        if len(train_classes) < 2 or len(test_classes) < 2:
            log.warning("fold %d holds a single class; skipping", i)
            outcome.skipped = True
            folds.append(outcome)
            continue
        model = fit_pipeline(train_sets, config)
        classifier = _fit_fold_classifier(model, train_sets, labels, config)
        if classifier is None:
            log.warning("fold %d produced no trainable features; skipping", i)
            outcome.skipped = True
            folds.append(outcome)
            continue
        subjects = _monitor_fold(model, classifier, test_sets, config.detection)
        outcome.report = fold_report(subjects)
        outcome.subjects = subjects
        if keep_models:
            outcome.model = model
            outcome.classifier = classifier
        folds.append(outcome)
    return EvaluationResult(folds=folds, mean=_mean_report(folds))


def reevaluate(
    prior: EvaluationResult,
    sets: Sequence[MeasurementSet],
    config: PipelineConfig,
    label_shuffle_seed: int | None = None,
) -> EvaluationResult:
    """Re-run monitoring with the prior folds' trained models.

    With a shuffle seed the per-fold classifier is refit on permuted training
    labels; embeddings and structures are label-free and stay as trained.
    """
    by_id = {s.set_id: s for s in sets}
    folds: list[FoldOutcome] = []
    for fold in prior.folds:
        if fold.skipped or fold.model is None or fold.classifier is None:
            folds.append(
                FoldOutcome(
                    index=fold.index,
                    train_ids=fold.train_ids,
                    test_ids=fold.test_ids,
                    model=None,
                    classifier=None,
                    report=None,
                    skipped=True,
                )
            )
            continue
        classifier = fold.classifier
        if label_shuffle_seed is not None:
            train_sets = [by_id[sid] for sid in fold.train_ids]
            labels = _training_labels(train_sets, label_shuffle_seed, fold.index)
            classifier = _fit_fold_classifier(fold.model, train_sets, labels, config)
        outcome = FoldOutcome(
            index=fold.index,
            train_ids=fold.train_ids,
            test_ids=fold.test_ids,
            model=fold.model,
            classifier=classifier,
            report=None,
        )
        if classifier is None:
            log.warning(
                "fold %d shuffled labels collapsed to one class; skipping", fold.index
            )
            outcome.skipped = True
            folds.append(outcome)
            continue
        test_sets = [by_id[sid] for sid in fold.test_ids]
        subjects = _monitor_fold(fold.model, classifier, test_sets, config.detection)
        outcome.report = fold_report(subjects)
        outcome.subjects = subjects
        folds.append(outcome)
    return EvaluationResult(folds=folds, mean=_mean_report(folds))
