"""Orchestration layer: seeding, route equality with the module-level calls,
prefix handling, and feature row assembly."""
from __future__ import annotations

import numpy as np
import pytest

from vitalks.config import PipelineConfig
from vitalks.errors import ConfigurationError, DataError
from vitalks.pipeline import (
    build_structures,
    channel_distances,
    discover_dictionaries,
    featurize,
    fit_pipeline,
    match_dataset,
    monitor_window_count,
    prefix_assignments,
    representation_for,
)
from vitalks.representation import full_representation
from vitalks.series import (
    MeasurementSet,
    assignments_from_distances,
    discover_shapelets,
    distance_matrix,
    subsequences,
)
from vitalks.structures import (
    build_cross_ks,
    build_domain_ks,
    concept_sets,
    cooccurrence_likelihood,
    transition_probabilities,
)
from vitalks.synth import SynthConfig, generate


def small_config(seed: int = 37) -> PipelineConfig:
    config = PipelineConfig()
    config.structure.shapelet_counts = {"X1": 4, "X2": 4}
    config.train.embedding_dim = 8
    config.train.epochs = 3
    config.train.negatives = 4
    config.train.walk_count = 4
    config.train.walk_length = 3
    config.train.max_path_length = 2
    config.train.mf_dim = 8
    config.apply_seed(seed)
    return config


@pytest.fixture(scope="module")
def dataset():
    synth = SynthConfig(
        n_sets=6,
        motifs_per_channel=4,
        block_size=4,
        gap_bucket_weights=(1.0, 0.0, 0.0, 0.0),
        noise_std=0.0,
        coupling={},
        seed=37,
    )
    sets, _ = generate(synth)
    return sets


@pytest.fixture(scope="module")
def model(dataset):
    return fit_pipeline(dataset, small_config())


def test_discovery_uses_per_channel_seed_streams(dataset):
    config = small_config()
    dictionaries = discover_dictionaries(dataset, config)
    assert sorted(dictionaries) == ["X1", "X2"]
    structure = config.structure
    for i, channel in enumerate(["X1", "X2"]):
        seed = int(np.random.default_rng([config.seed, 21, i]).integers(2**31))
        direct = discover_shapelets(
            [m.series[channel] for m in dataset],
            count=structure.shapelet_counts[channel],
            length=structure.shapelet_length,
            seed=seed,
            max_candidates=structure.max_candidates,
            iterations=structure.kmeans_iterations,
        )
        for got, want in zip(dictionaries[channel].shapelets, direct.shapelets):
            assert got.shapelet_id == want.shapelet_id
            assert np.array_equal(got.values, want.values)


def test_discovery_requires_channel_counts(dataset):
    config = small_config()
    config.structure.shapelet_counts = {"X1": 4}
    with pytest.raises(ConfigurationError):
        discover_dictionaries(dataset, config)


def test_discovery_requires_series():
    with pytest.raises(DataError):
        discover_dictionaries([MeasurementSet("empty")], small_config())


def test_match_dataset_equals_direct_route(dataset, model):
    config = small_config()
    matched = match_dataset(dataset, model.dictionaries, config.structure)
    mset = dataset[0]
    for channel, dictionary in model.dictionaries.items():
        windows = subsequences(mset.series[channel].values, dictionary.length)
        direct = assignments_from_distances(
            distance_matrix(windows, dictionary),
            dictionary.length,
            threshold=config.structure.assignment_threshold,
            top_k=config.structure.assignment_top_k,
        )
        assert matched[mset.set_id][channel] == direct


def test_match_dataset_missing_channel(model):
    config = small_config()
    bare = MeasurementSet("solo")
    matched = match_dataset([bare], model.dictionaries, config.structure)
    assert matched["solo"] == {"X1": [], "X2": []}


def test_build_structures_equals_module_routes(dataset, model):
    config = small_config()
    matched = match_dataset(dataset, model.dictionaries, config.structure)
    domain, transitions, cross = build_structures(matched, config.structure)
    for channel in ("X1", "X2"):
        lists = [per[channel] for _, per in sorted(matched.items())]
        assert domain[channel].triplets == build_domain_ks(lists, channel).triplets
        assert (
            transitions[channel].counts
            == transition_probabilities(lists, channel).counts
        )
    likelihoods = cooccurrence_likelihood(concept_sets(matched), ("X1", "X2"))
    direct = build_cross_ks(likelihoods, bins=config.structure.correlation_bins)
    assert cross.correlations == direct.correlations
    assert cross.triplets == direct.triplets


def test_fit_pipeline_shape_and_determinism(dataset, model):
    assert sorted(model.domain) == ["X1", "X2"]
    assert model.store.dim == 8
    assert model.feature_width == 6 * 8 * 2
    assert len(model.losses) == 3
    assert not model.diverged
    again = fit_pipeline(dataset, small_config())
    assert np.array_equal(again.store.concepts, model.store.concepts)
    assert np.array_equal(again.store.relations, model.store.relations)
    assert np.array_equal(again.store.correlations, model.store.correlations)


def test_channel_distances_missing_channel(model):
    bare = MeasurementSet("solo")
    distances = channel_distances(model, bare)
    for channel, dictionary in model.dictionaries.items():
        assert distances[channel].shape == (len(dictionary.shapelets), 0)


def test_prefix_assignments_respect_observed_window(dataset, model):
    mset = dataset[0]
    distances = channel_distances(model, mset)
    length = model.config.structure.shapelet_length
    empty = prefix_assignments(model, distances, 0.0)
    assert all(members == [] for members in empty.values())
    partial = prefix_assignments(model, distances, 90.0)
    for channel, members in partial.items():
        assert members == assignments_from_distances(
            distances[channel][:, :6],
            length,
            threshold=model.config.structure.assignment_threshold,
            top_k=model.config.structure.assignment_top_k,
        )
        assert all(a.start_minute + length <= 90.0 for a in members)
    # a short observation that does not cover a full window adds nothing
    assert prefix_assignments(model, distances, length - 1) == {
        "X1": [], "X2": [],
    }
    full = prefix_assignments(model, distances, 10_000.0)
    matched = match_dataset([mset], model.dictionaries, model.config.structure)
    assert full == matched[mset.set_id]


def test_representation_for_equals_direct(dataset, model):
    mset = dataset[1]
    distances = channel_distances(model, mset)
    assignments = prefix_assignments(model, distances, 480.0)
    vec = representation_for(model, assignments)
    direct = full_representation(
        assignments, model.domain, model.store, model.config.detection.decay
    )
    assert np.array_equal(vec, direct)
    assert vec.shape == (model.feature_width,)


def test_monitor_window_count(dataset, model):
    assert monitor_window_count(model, dataset[0]) == 16
    assert monitor_window_count(model, MeasurementSet("solo")) == 0
    ragged = MeasurementSet(
        "ragged",
        series={
            "X1": dataset[0].series["X1"],
        },
    )
    assert monitor_window_count(model, ragged) == 16


def test_featurize_prefix_rows(dataset, model):
    rows = featurize(model, dataset[:2], prefix=True)
    window = model.config.detection.window_minutes
    per_set = 480 // window
    assert len(rows) == 2 * per_set
    for set_index, mset in enumerate(dataset[:2]):
        chunk = rows[set_index * per_set : (set_index + 1) * per_set]
        minutes = [row[1] for row in chunk]
        assert minutes == [float(k * window) for k in range(1, per_set + 1)]
        assert all(row[0] == mset.set_id for row in chunk)
        assert all(row[3] == mset.label for row in chunk)
    final = rows[per_set - 1]
    distances = channel_distances(model, dataset[0])
    assignments = prefix_assignments(model, distances, 480.0)
    assert np.array_equal(final[2], representation_for(model, assignments))


def test_featurize_full_rows_only(dataset, model):
    rows = featurize(model, dataset, prefix=False)
    assert len(rows) == len(dataset)
    assert all(row[1] == 480.0 for row in rows)


def test_featurize_honors_config_default(dataset, model):
    assert model.config.detection.prefix_training is True
    default_rows = featurize(model, dataset[:1])
    assert len(default_rows) == 16


def test_featurize_rejects_misaligned_window(dataset, model):
    import copy

    broken = copy.deepcopy(model.config)
    broken.detection.window_minutes = 20
    patched = model.__class__(
        dictionaries=model.dictionaries,
        domain=model.domain,
        transitions=model.transitions,
        cross=model.cross,
        store=model.store,
        mf=model.mf,
        strengths=model.strengths,
        config=broken,
        losses=model.losses,
        diverged=model.diverged,
    )
    with pytest.raises(ConfigurationError):
        featurize(patched, dataset[:1])
