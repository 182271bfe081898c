"""Monitor, metrics, and evaluation protocol against hand-built oracles.

Metric formulas are pinned with exact spot values and a pairwise AUC
recount; the streaming monitor is driven window by window against a full
replay to verify prefix consistency, halt-once semantics, delayed starts,
and the empty-evidence guard; the k-fold protocol is exercised end to end
on a small planted dataset.
"""
from __future__ import annotations

import copy
from dataclasses import replace

import numpy as np
import pytest

from vitalks.config import DetectionConfig, PipelineConfig
from vitalks.detection import (
    EvaluationResult,
    MonitorState,
    SubjectOutcome,
    _fit_fold_classifier,
    _training_labels,
    apache_level,
    auc_score,
    composite,
    earliness,
    evaluate,
    fold_report,
    fold_split,
    monitor_series,
    monitor_step,
    prune_training,
    reevaluate,
    start_monitor,
)
from vitalks.errors import DataError, InvalidArgumentError, StreamError
from vitalks.pipeline import fit_pipeline
from vitalks.series import MeasurementSet
from vitalks.synth import SynthConfig, generate


class ConstantClassifier:
    def __init__(self, probability: float):
        self.probability = probability

    def predict_probability(self, rows: np.ndarray) -> np.ndarray:
        return np.full(rows.shape[0], self.probability)


@pytest.fixture(scope="module")
def fitted():
    synth = SynthConfig(
        n_sets=16,
        motifs_per_channel=4,
        block_size=4,
        gap_bucket_weights=(1.0, 0.0, 0.0, 0.0),
        noise_std=0.0,
        coupling={},
        deteriorating_rate=0.5,
        seed=23,
    )
    sets, _ = generate(synth)
    config = PipelineConfig()
    config.structure.shapelet_counts = {"X1": 4, "X2": 4}
    config.train.embedding_dim = 8
    config.train.epochs = 5
    config.train.negatives = 4
    config.train.walk_count = 4
    config.train.walk_length = 3
    config.train.max_path_length = 2
    config.train.mf_dim = 8
    config.detection.folds = 2
    config.apply_seed(23)
    model = fit_pipeline(sets, config)
    labels = {s.set_id: s.label for s in sets}
    classifier = _fit_fold_classifier(model, sets, labels, config)
    assert classifier is not None
    return sets, config, model, classifier


def window_chunks(mset: MeasurementSet, window: int):
    total = min(ts.values.size for ts in mset.series.values())
    for k in range(total // window):
        yield {
            channel: ts.values[k * window : (k + 1) * window]
            for channel, ts in mset.series.items()
        }


# metric formulas


def test_earliness_spot_values():
    assert earliness(480, 60) == 0.875
    assert earliness(480, 30) == 0.9375
    assert earliness(480, 480) == 0.0
    assert earliness(100, 25) == 0.75


@pytest.mark.parametrize(
    "total,minute",
    [(0, 10), (-5, 1), (480, 0), (480, -1), (480, 481)],
)
def test_earliness_domain(total, minute):
    with pytest.raises(InvalidArgumentError):
        earliness(total, minute)


def test_earliness_stays_in_unit_interval():
    rng = np.random.default_rng(0)
    for _ in range(200):
        total = rng.uniform(1, 1000)
        minute = rng.uniform(1e-6, total)
        value = earliness(total, minute)
        assert 0.0 <= value < 1.0 or value == 0.0
        assert 0.0 <= value <= 1.0


def test_composite_spot_values():
    assert abs(composite(0.6839, 0.4308) - 0.55735) < 1e-12
    assert composite(1.0, 1.0) == 1.0
    assert composite(0.0, 0.0) == 0.0
    for bad in (-0.1, 1.1):
        with pytest.raises(InvalidArgumentError):
            composite(bad, 0.5)
        with pytest.raises(InvalidArgumentError):
            composite(0.5, bad)


def test_apache_level_spot_values():
    assert apache_level(7) == 2
    assert apache_level(0) == 1
    assert apache_level(4) == 1
    assert apache_level(5) == 2
    assert apache_level(34) == 7
    assert apache_level(35) == 8
    assert apache_level(400) == 8
    with pytest.raises(InvalidArgumentError):
        apache_level(-1)


def auc_brute_force(scores, labels) -> float | None:
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    if not pos or not neg:
        return None
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def test_auc_matches_pairwise_brute_force():
    rng = np.random.default_rng(4)
    for trial in range(20):
        n = int(rng.integers(2, 60))
        labels = rng.integers(0, 2, size=n)
        # integer scores force plenty of ties
        scores = rng.integers(0, 6, size=n).astype(float)
        expected = auc_brute_force(scores, labels)
        actual = auc_score(scores, labels)
        if expected is None:
            assert actual is None
        else:
            assert abs(actual - expected) < 1e-12


def test_auc_edge_cases():
    assert auc_score([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auc_score([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0
    assert auc_score([0.5, 0.5, 0.5, 0.5], [1, 1, 0, 0]) == 0.5
    assert auc_score([0.5, 0.6], [1, 1]) is None
    assert auc_score([0.5, 0.6], [0, 0]) is None


# pruning


def labeled_stub(set_id: str, label: str) -> MeasurementSet:
    return MeasurementSet(set_id=set_id, series={}, label=label)


def test_prune_zero_fraction_is_identity():
    sets = [labeled_stub(f"s{i}", "deteriorating") for i in range(4)]
    assert prune_training(sets, 0.0, seed=1) == sets


def test_prune_counts_and_preserves_negatives():
    sets = [labeled_stub(f"p{i:02d}", "deteriorating") for i in range(10)]
    sets += [labeled_stub(f"n{i:02d}", "recovering") for i in range(6)]
    kept = prune_training(sets, 0.5, seed=9)
    kept_labels = [s.label for s in kept]
    assert kept_labels.count("deteriorating") == 5
    assert kept_labels.count("recovering") == 6
    # relative order of survivors is preserved
    kept_ids = [s.set_id for s in kept]
    assert kept_ids == [s.set_id for s in sets if s.set_id in set(kept_ids)]


def test_prune_rounds_to_nearest():
    sets = [labeled_stub(f"p{i:03d}", "deteriorating") for i in range(84)]
    kept = prune_training(sets, 0.3, seed=2)
    assert len(kept) == 84 - 25  # round(25.2)


def test_prune_deterministic():
    sets = [labeled_stub(f"p{i:02d}", "deteriorating") for i in range(12)]
    first = [s.set_id for s in prune_training(sets, 0.5, seed=7)]
    second = [s.set_id for s in prune_training(sets, 0.5, seed=7)]
    assert first == second
    other = [s.set_id for s in prune_training(sets, 0.5, seed=8)]
    assert sorted(first) != sorted(other) or first == other


def test_prune_domain():
    sets = [labeled_stub("a", "deteriorating")]
    for bad in (1.0, 1.5, -0.1):
        with pytest.raises(InvalidArgumentError):
            prune_training(sets, bad, seed=0)


# subject outcomes and fold reports


def test_subject_outcome_earliness():
    hit = SubjectOutcome("a", "deteriorating", True, 60.0, 480.0, 0.9)
    assert hit.earliness == 0.875
    miss = SubjectOutcome("b", "deteriorating", False, None, 480.0, 0.2)
    assert miss.earliness == 0.0


def test_fold_report_perfect_detector():
    subjects = [
        SubjectOutcome("a", "deteriorating", True, 30.0, 480.0, 0.9),
        SubjectOutcome("b", "deteriorating", True, 30.0, 480.0, 0.8),
        SubjectOutcome("c", "recovering", False, None, 480.0, 0.1),
        SubjectOutcome("d", "recovering", False, None, 480.0, 0.2),
    ]
    report = fold_report(subjects)
    assert report.accuracy == 1.0
    assert report.recall == 1.0
    assert report.precision == 1.0
    assert report.f1 == 1.0
    assert report.auc == 1.0
    assert report.earliness == pytest.approx((0.9375 + 0.9375) / 4)
    assert report.composite == pytest.approx((1.0 + 0.46875) / 2)
    assert report.subjects == 4
    assert report.detected == 2


def test_fold_report_constant_negative_detector():
    subjects = [
        SubjectOutcome("a", "deteriorating", False, None, 480.0, 0.5),
        SubjectOutcome("b", "recovering", False, None, 480.0, 0.5),
        SubjectOutcome("c", "recovering", False, None, 480.0, 0.5),
    ]
    report = fold_report(subjects)
    assert report.recall == 0.0
    assert report.precision == 0.0
    assert report.f1 == 0.0
    assert report.accuracy == pytest.approx(2 / 3)
    assert report.earliness == 0.0
    assert report.auc == 0.5
    assert report.detected == 0


def test_fold_report_empty():
    report = fold_report([])
    assert report.accuracy == 0.0
    assert report.f1 == 0.0
    assert report.auc is None
    assert report.subjects == 0


# fold splitting and label shuffling


def test_fold_split_partitions():
    ids = [f"s{i:02d}" for i in range(11)]
    chunks = fold_split(ids, 3, seed=5)
    assert len(chunks) == 3
    flat = [sid for chunk in chunks for sid in chunk]
    assert sorted(flat) == ids
    sizes = sorted(len(chunk) for chunk in chunks)
    assert sizes == [3, 4, 4]
    assert fold_split(ids, 3, seed=5) == chunks
    with pytest.raises(InvalidArgumentError):
        fold_split(ids, 1, seed=5)


def test_training_labels_shuffle():
    sets = [
        labeled_stub(f"s{i:02d}", "deteriorating" if i % 3 else "recovering")
        for i in range(30)
    ]
    plain = _training_labels(sets, None, fold=0)
    assert plain == {s.set_id: s.label for s in sets}
    shuffled = _training_labels(sets, 99, fold=0)
    assert shuffled == _training_labels(sets, 99, fold=0)
    assert sorted(shuffled.values()) == sorted(plain.values())
    assert shuffled != plain
    assert _training_labels(sets, 99, fold=1) != shuffled


# streaming monitor mechanics


def test_monitor_prefix_consistent(fitted):
    sets, config, model, classifier = fitted
    mset = sets[0]
    detection = replace(config.detection, threshold=1.5)
    full = monitor_series(model, classifier, mset, detection)
    assert len(full.trace) >= 8
    partial = start_monitor(model, mset.set_id, full.total_minutes)
    for k, chunk in enumerate(window_chunks(mset, detection.window_minutes)):
        if k >= 5:
            break
        monitor_step(partial, chunk, model, classifier, threshold=1.5)
        assert partial.trace[k]["probability"] == full.trace[k]["probability"]
        assert partial.trace[k]["t"] == full.trace[k]["t"]


def test_monitor_trace_shape(fitted):
    sets, config, model, classifier = fitted
    state = monitor_series(model, classifier, sets[1], replace(config.detection, threshold=1.5))
    for step in state.trace:
        assert set(step) == {
            "set_id", "t", "probability", "halted", "matched_concepts",
            "top_strength_edges",
        }
        assert step["set_id"] == sets[1].set_id
        assert all(":" in ref for ref in step["matched_concepts"])
        for edge in step["top_strength_edges"]:
            assert set(edge) == {"head", "tail", "view", "strength"}
    times = [step["t"] for step in state.trace]
    assert times == sorted(times)


def test_monitor_halts_once_and_locks(fitted):
    sets, config, model, _ = fitted
    mset = sets[0]
    eager = ConstantClassifier(0.99)
    state = start_monitor(model, mset.set_id, 480.0)
    chunks = window_chunks(mset, config.detection.window_minutes)
    monitor_step(state, next(chunks), model, eager, threshold=0.5)
    assert state.halted
    assert state.detection_minute == config.detection.window_minutes
    with pytest.raises(StreamError):
        monitor_step(state, next(chunks), model, eager, threshold=0.5)


def test_monitor_delay_suppresses_decisions(fitted):
    sets, config, model, _ = fitted
    mset = sets[0]
    eager = ConstantClassifier(0.99)
    state = start_monitor(model, mset.set_id, 480.0)
    for chunk in window_chunks(mset, config.detection.window_minutes):
        if state.halted:
            break
        monitor_step(state, chunk, model, eager, threshold=0.5, delay_minutes=120.0)
    assert state.halted
    assert state.detection_minute == 120.0
    # suppressed steps still record their probabilities
    assert len(state.trace) == 4
    assert all(step["probability"] == pytest.approx(0.99) for step in state.trace)


def test_monitor_series_applies_delay_fraction(fitted):
    sets, config, model, _ = fitted
    eager = ConstantClassifier(0.99)
    detection = replace(config.detection, delay_fraction=0.5, threshold=0.5)
    state = monitor_series(model, eager, sets[2], detection)
    assert state.halted
    assert state.detection_minute == 0.5 * state.total_minutes


def test_monitor_requires_structure_evidence(fitted):
    # a single matched window yields no triplets, so the representation is
    # all zeros and the monitor must not halt on it
    sets, config, model, _ = fitted
    mset = sets[0]
    eager = ConstantClassifier(1.0)
    length = config.structure.shapelet_length
    state = MonitorState(set_id="probe", window_minutes=length, total_minutes=480.0)
    values = {ch: ts.values for ch, ts in mset.series.items()}
    first = {ch: vals[:length] for ch, vals in values.items()}
    monitor_step(state, first, model, eager, threshold=0.5)
    assert not state.halted
    second = {ch: vals[length : 2 * length] for ch, vals in values.items()}
    monitor_step(state, second, model, eager, threshold=0.5)
    assert state.halted


def test_monitor_stream_errors(fitted):
    sets, config, model, classifier = fitted
    mset = sets[0]
    window = config.detection.window_minutes
    state = start_monitor(model, mset.set_id, 480.0)
    with pytest.raises(StreamError):
        monitor_step(state, {}, model, classifier)
    with pytest.raises(StreamError):
        monitor_step(
            state, {"X9": np.zeros(window)}, model, classifier
        )
    with pytest.raises(StreamError):
        monitor_step(
            state, {"X1": np.zeros(window - 1)}, model, classifier
        )
    bad = np.zeros(window)
    bad[3] = np.nan
    with pytest.raises(StreamError):
        monitor_step(state, {"X1": bad}, model, classifier)
    # the state survives rejected steps and accepts a clean one
    chunk = next(window_chunks(mset, window))
    monitor_step(state, chunk, model, classifier, threshold=1.5)
    assert len(state.trace) == 1


# evaluation protocol


def test_evaluate_two_folds_deterministic(fitted):
    sets, config, _, _ = fitted
    first = evaluate(sets, config)
    second = evaluate(sets, config)
    assert first.to_json() == second.to_json()
    data = first.to_json()
    assert data["format_version"] == 1
    assert len(data["folds"]) == 2
    assert data["mean"] is not None
    assert data["mean"]["subjects"] == len(sets)


def test_evaluate_requires_labels(fitted):
    sets, config, _, _ = fitted
    broken = [replace(s, label=None) if i == 0 else s for i, s in enumerate(sets)]
    with pytest.raises(DataError):
        evaluate(broken, config)


def test_evaluate_skips_single_class_folds(caplog):
    config = PipelineConfig()
    config.detection.folds = 2
    sets, _ = generate(
        SynthConfig(
            n_sets=6,
            motifs_per_channel=4,
            block_size=4,
            gap_bucket_weights=(1.0, 0.0, 0.0, 0.0),
            noise_std=0.0,
            coupling={},
            seed=29,
        )
    )
    # one recovering subject: every 2-fold split leaves a single-class side
    relabeled = [
        replace(s, label="recovering" if i == 0 else "deteriorating")
        for i, s in enumerate(sets)
    ]
    with caplog.at_level("WARNING", logger="vitalks.detection"):
        result = evaluate(relabeled, config)
    assert all(fold.skipped for fold in result.folds)
    assert result.mean is None
    assert result.to_json()["skipped_folds"] == [0, 1]
    assert any("single class" in r.message for r in caplog.records)


def test_reevaluate_reuses_fold_models(fitted):
    sets, config, _, _ = fitted
    prior = evaluate(sets, config, keep_models=True)
    assert prior.mean is not None
    again = reevaluate(prior, sets, config)
    assert again.to_json() == prior.to_json()


def test_reevaluate_with_modified_detection(fitted):
    sets, config, _, _ = fitted
    prior = evaluate(sets, config, keep_models=True)
    strict = copy.deepcopy(config)
    strict.detection.threshold = 1.5
    silent = reevaluate(prior, sets, strict)
    assert silent.mean is not None
    assert silent.mean.detected == 0
    assert silent.mean.recall == 0.0
    assert silent.mean.earliness == 0.0


def test_reevaluate_label_shuffle_deterministic(fitted):
    sets, config, _, _ = fitted
    prior = evaluate(sets, config, keep_models=True)
    first = reevaluate(prior, sets, config, label_shuffle_seed=3)
    second = reevaluate(prior, sets, config, label_shuffle_seed=3)
    assert first.to_json() == second.to_json()


def test_reevaluate_skips_folds_without_models(fitted):
    sets, config, _, _ = fitted
    prior = evaluate(sets, config)  # keep_models defaults to False
    again = reevaluate(prior, sets, config)
    assert all(fold.skipped for fold in again.folds)
    assert again.mean is None


def test_evaluate_prune_fraction_changes_training(fitted):
    sets, config, _, _ = fitted
    labels = {s.set_id: s.label for s in sets}
    pruned = evaluate(sets, config, prune_fraction=0.4)
    baseline = evaluate(sets, config)
    removed_total = 0
    for fold, base in zip(pruned.folds, baseline.folds):
        positives = sum(
            1 for sid in base.train_ids if labels[sid] == "deteriorating"
        )
        expected_removed = int(round(0.4 * positives))
        assert len(fold.train_ids) == len(base.train_ids) - expected_removed
        assert set(fold.train_ids) <= set(base.train_ids)
        kept_recovering = {
            sid for sid in fold.train_ids if labels[sid] == "recovering"
        }
        base_recovering = {
            sid for sid in base.train_ids if labels[sid] == "recovering"
        }
        assert kept_recovering == base_recovering
        removed_total += expected_removed
    assert removed_total > 0
