"""Alternating-training mechanics against closed-form and planted oracles.

The loss-term coefficients are checked against central finite differences of
the loss values themselves, a one-pair setup with single-concept pools makes
every corruption collide with the positive so the epoch objective has a
closed form, and full runs on a small planted dataset pin the decreasing
domain loss, determinism, and the non-finite rollback.
"""
from __future__ import annotations

import numpy as np
import pytest

import vitalks.training as training
from vitalks.config import PipelineConfig, TrainConfig
from vitalks.embedding import Adam, EmbeddingStore, complex_score, log_sigmoid
from vitalks.errors import ArtifactError, InvalidArgumentError
from vitalks.pipeline import build_structures, discover_dictionaries, match_dataset
from vitalks.structures import Correlation, CrossKS, CrossTriplet, build_cross_ks
from vitalks.synth import SynthConfig, generate
from vitalks.training import (
    MODEL_MAGIC,
    CrossTrainingSet,
    DomainTrainingSet,
    TrainResult,
    _adversarial_loss_terms,
    _uniform_loss_terms,
    cross_epoch,
    domain_epoch,
    load_model,
    model_from_json,
    model_to_json,
    save_model,
    train,
)


def small_train_config(**overrides) -> TrainConfig:
    base = dict(
        embedding_dim=8,
        epochs=5,
        negatives=4,
        walk_count=4,
        walk_length=3,
        max_path_length=2,
        mf_dim=8,
        seed=11,
    )
    base.update(overrides)
    return TrainConfig(**base)


def planted_structures():
    """Small real structures from a contiguous zero-noise dataset."""
    synth = SynthConfig(
        n_sets=8,
        motifs_per_channel=4,
        block_size=4,
        gap_bucket_weights=(1.0, 0.0, 0.0, 0.0),
        noise_std=0.0,
        coupling={},
        seed=19,
    )
    sets, _ = generate(synth)
    pipe = PipelineConfig()
    pipe.structure.shapelet_counts = {"X1": 4, "X2": 4}
    pipe.apply_seed(19)
    dictionaries = discover_dictionaries(sets, pipe)
    matched = match_dataset(sets, dictionaries, pipe.structure)
    domain, transitions, cross = build_structures(matched, pipe.structure)
    counts = {ch: len(d.shapelets) for ch, d in dictionaries.items()}
    return domain, transitions, cross, counts


def one_pair_setup(config: TrainConfig):
    """One cross pair with single-concept pools; negatives always collide."""
    cross = build_cross_ks({(("X1", 0), ("X2", 0)): 1.0})
    store = EmbeddingStore.init(
        [("X1", 0), ("X2", 0)],
        n_relations=4,
        n_correlations=len(cross.correlations),
        dim=config.embedding_dim,
        seed=config.seed,
    )
    setup = CrossTrainingSet(store, cross, {}, {}, config)
    return store, cross, setup


# loss terms against finite differences of their own values


def test_uniform_coeffs_match_loss_derivatives():
    rng = np.random.default_rng(1)
    f_pos = rng.normal(size=5)
    f_neg = rng.normal(size=(5, 4))
    margins = rng.uniform(0.5, 3.0, size=5)
    _, c_pos, c_neg = _uniform_loss_terms(f_pos, f_neg, margins)
    h = 1e-6
    for i in range(5):
        up, down = f_pos.copy(), f_pos.copy()
        up[i] += h
        down[i] -= h
        lp, _, _ = _uniform_loss_terms(up, f_neg, margins)
        lm, _, _ = _uniform_loss_terms(down, f_neg, margins)
        assert abs((lp[i] - lm[i]) / (2 * h) - c_pos[i]) < 1e-6
        for j in range(4):
            up, down = f_neg.copy(), f_neg.copy()
            up[i, j] += h
            down[i, j] -= h
            lp, _, _ = _uniform_loss_terms(f_pos, up, margins)
            lm, _, _ = _uniform_loss_terms(f_pos, down, margins)
            assert abs((lp[i] - lm[i]) / (2 * h) - c_neg[i, j]) < 1e-6


def test_adversarial_coeffs_match_loss_derivatives():
    # the negative coefficients include the softmax weight response
    rng = np.random.default_rng(2)
    f_pos = rng.normal(size=4)
    f_neg = rng.normal(size=(4, 5))
    margin, temperature = 2.0, 1.3
    _, c_pos, c_neg = _adversarial_loss_terms(f_pos, f_neg, margin, temperature)
    h = 1e-6
    for i in range(4):
        up, down = f_pos.copy(), f_pos.copy()
        up[i] += h
        down[i] -= h
        lp, _, _ = _adversarial_loss_terms(up, f_neg, margin, temperature)
        lm, _, _ = _adversarial_loss_terms(down, f_neg, margin, temperature)
        assert abs((lp[i] - lm[i]) / (2 * h) - c_pos[i]) < 1e-6
        for j in range(5):
            up, down = f_neg.copy(), f_neg.copy()
            up[i, j] += h
            down[i, j] -= h
            lp, _, _ = _adversarial_loss_terms(f_pos, up, margin, temperature)
            lm, _, _ = _adversarial_loss_terms(f_pos, down, margin, temperature)
            assert abs((lp[i] - lm[i]) / (2 * h) - c_neg[i, j]) < 1e-6


def test_adversarial_zero_temperature_is_uniform():
    rng = np.random.default_rng(3)
    f_pos = rng.normal(size=6)
    f_neg = rng.normal(size=(6, 3))
    margin = 1.7
    margins = np.full(6, margin)
    u_loss, u_pos, u_neg = _uniform_loss_terms(f_pos, f_neg, margins)
    a_loss, a_pos, a_neg = _adversarial_loss_terms(f_pos, f_neg, margin, 0.0)
    assert np.allclose(u_loss, a_loss, atol=1e-12)
    assert np.allclose(u_pos, a_pos, atol=1e-12)
    assert np.allclose(u_neg, a_neg, atol=1e-12)


# cross epoch on the one-pair setup


def test_contexts_fall_back_to_plain_vectors():
    config = small_train_config()
    store, cross, setup = one_pair_setup(config)
    contexts = setup.contexts(store)
    for ref in (("X1", 0), ("X2", 0)):
        assert np.array_equal(contexts.concept[ref], store.concept(ref))
        contexts.concept[ref][0, 0] += 1.0
        assert contexts.concept[ref][0, 0] != store.concept(ref)[0, 0]
    pair = (("X1", 0), ("X2", 0))
    corr = setup.pair_correlation[pair]
    assert np.array_equal(contexts.correlation[pair], store.correlation(corr))


def test_cross_epoch_closed_form_objective():
    # single pair, single-concept pools: every negative equals the positive,
    # contexts equal the plain vectors, so the objective is fully explicit
    config = small_train_config()
    store, cross, setup = one_pair_setup(config)
    contexts = setup.contexts(store)
    corr = setup.pair_correlation[(("X1", 0), ("X2", 0))]
    f = complex_score(
        store.concept(("X1", 0)), store.correlation(corr), store.concept(("X2", 0))
    )
    margin = config.margin
    per_view = -log_sigmoid(margin + f) - log_sigmoid(-f - margin)
    expected = (1.0 + config.context_weight) * per_view
    relations_before = store.relations.copy()
    value = cross_epoch(
        store,
        setup,
        contexts,
        strengths=None,
        config=config,
        adam=Adam(store.params()),
        rng=np.random.default_rng(0),
        infer_loss=0.7,
    )
    assert abs(value - (expected + 0.7)) < 1e-9
    # the relation table is untouched by the cross step
    assert np.array_equal(store.relations, relations_before)
    # correlation imaginary parts stay pinned at zero
    assert np.all(store.correlations[:, 1, :] == 0.0)


def test_cross_epoch_empty_structure_warns(caplog):
    config = small_train_config()
    store = EmbeddingStore.init([("X1", 0)], 4, 1, config.embedding_dim, 1)
    setup = CrossTrainingSet(store, CrossKS(), {}, {}, config)
    before = store.concepts.copy()
    with caplog.at_level("WARNING", logger="vitalks.training"):
        value = cross_epoch(
            store, setup, setup.contexts(store), None, config, Adam(store.params())
        )
    assert value == 0.0
    # the ranking objective is passed through untouched
    assert cross_epoch(
        store, setup, setup.contexts(store), None, config, Adam(store.params()),
        infer_loss=0.25,
    ) == 0.25
    assert np.array_equal(store.concepts, before)
    assert any("nothing to train" in record.message for record in caplog.records)


def test_cross_setup_rejects_misaligned_channels():
    config = small_train_config()
    refs = [("X1", 0), ("X2", 0), ("X2", 1), ("X3", 0)]
    store = EmbeddingStore.init(refs, 4, 1, config.embedding_dim, 1)
    cross = CrossKS(correlations=[Correlation(0, 0.0, 1.0)])
    cross.triplets = {
        (("X1", 0), ("X2", 0)): CrossTriplet(("X1", 0), ("X2", 0), 0, 1.0),
        (("X2", 1), ("X3", 0)): CrossTriplet(("X2", 1), ("X3", 0), 0, 0.5),
    }
    with pytest.raises(InvalidArgumentError):
        CrossTrainingSet(store, cross, {}, {}, config)


def test_domain_epoch_empty_warns(caplog):
    config = small_train_config()
    store = EmbeddingStore.init([("X1", 0)], 4, 1, config.embedding_dim, 1)
    with caplog.at_level("WARNING", logger="vitalks.training"):
        value = domain_epoch(store, [], config)
    assert value == 0.0
    assert any("nothing to train" in record.message for record in caplog.records)


# full runs on planted structures


def test_domain_loss_decreases_over_training():
    domain, transitions, cross, counts = planted_structures()
    config = small_train_config(epochs=50)
    result = train(domain, transitions, cross, counts, config)
    assert not result.diverged
    assert len(result.losses) == 50
    first = result.losses[0]["domain"]
    last = result.losses[-1]["domain"]
    assert np.isfinite(first) and np.isfinite(last)
    assert last < first


def test_train_is_deterministic():
    domain, transitions, cross, counts = planted_structures()
    config = small_train_config(epochs=6)
    first = train(domain, transitions, cross, counts, config)
    second = train(domain, transitions, cross, counts, config)
    assert np.array_equal(first.store.concepts, second.store.concepts)
    assert np.array_equal(first.store.relations, second.store.relations)
    assert np.array_equal(first.store.correlations, second.store.correlations)
    assert first.losses == second.losses
    assert np.array_equal(first.mf.pair_vectors, second.mf.pair_vectors)
    assert first.strengths.csv_rows() == second.strengths.csv_rows()


def test_train_populates_strengths_and_history():
    domain, transitions, cross, counts = planted_structures()
    config = small_train_config(epochs=4)
    result = train(domain, transitions, cross, counts, config, keep_strength_history=True)
    assert result.mf is not None
    assert result.strengths is not None
    assert len(result.strength_history) == 4
    assert result.strengths.csv_rows()
    # each pair's full distribution over ambiguity types is normalized
    for pair in result.strengths.rows:
        assert abs(sum(result.strengths.row(pair).values()) - 1.0) < 1e-9


def test_train_without_cross_structure():
    domain, transitions, _, counts = planted_structures()
    config = small_train_config(epochs=3)
    result = train(domain, transitions, CrossKS(), counts, config)
    assert result.mf is None
    assert result.strengths is None
    assert len(result.losses) == 3
    assert all(np.isfinite(entry["domain"]) for entry in result.losses)
    assert all(entry["infer"] == 0.0 for entry in result.losses)


def test_train_defaults_relations_without_domain():
    config = small_train_config(epochs=1)
    result = train({}, {}, CrossKS(), {"X1": 2}, config)
    assert result.store.relations.shape == (4, 2, config.embedding_dim)
    assert result.losses[0]["domain"] == 0.0


def test_divergence_rolls_back_to_finite_state(monkeypatch):
    domain, transitions, cross, counts = planted_structures()
    config = small_train_config(epochs=10)
    real = training.domain_epoch
    calls = {"count": 0}

    def wrapped(store, domain_sets, cfg, adam=None, rng=None):
        calls["count"] += 1
        if calls["count"] == 3:
            return float("nan")
        return real(store, domain_sets, cfg, adam, rng)

    monkeypatch.setattr(training, "domain_epoch", wrapped)
    result = training.train(domain, transitions, cross, counts, config)
    assert result.diverged is True
    assert len(result.losses) == 3
    assert np.all(np.isfinite(result.store.concepts))
    assert np.all(np.isfinite(result.store.relations))
    assert np.all(np.isfinite(result.store.correlations))


# model artifacts


def trained_tiny() -> TrainResult:
    domain, transitions, cross, counts = planted_structures()
    return train(domain, transitions, cross, counts, small_train_config(epochs=2))


def test_model_json_roundtrip(tmp_path):
    result = trained_tiny()
    config = small_train_config(epochs=2)
    path = tmp_path / "model.json"
    save_model(result.store, result.mf, config, str(path))
    store, mf, loaded_config = load_model(str(path))
    assert loaded_config == config
    assert store.concept_index == result.store.concept_index
    assert np.array_equal(store.concepts, result.store.concepts)
    assert np.array_equal(store.relations, result.store.relations)
    assert np.array_equal(store.correlations, result.store.correlations)
    assert mf.pair_index == result.mf.pair_index
    assert np.array_equal(mf.pair_vectors, result.mf.pair_vectors)
    assert np.array_equal(mf.type_vectors, result.mf.type_vectors)


def test_model_binary_roundtrip(tmp_path):
    result = trained_tiny()
    config = small_train_config(epochs=2)
    path = tmp_path / "model.bin"
    save_model(result.store, result.mf, config, str(path), binary=True)
    blob = path.read_bytes()
    assert blob[:8] == MODEL_MAGIC
    assert blob[8:12] == (1).to_bytes(4, "little")
    assert blob[12:16] == b"\x00" * 4
    store, mf, loaded_config = load_model(str(path))
    assert loaded_config == config
    assert np.array_equal(store.concepts, result.store.concepts)
    assert np.array_equal(store.relations, result.store.relations)
    assert np.array_equal(store.correlations, result.store.correlations)
    assert np.array_equal(mf.pair_vectors, result.mf.pair_vectors)
    assert np.array_equal(mf.type_vectors, result.mf.type_vectors)


def test_model_roundtrip_without_mf(tmp_path):
    domain, transitions, _, counts = planted_structures()
    config = small_train_config(epochs=1)
    result = train(domain, transitions, CrossKS(), counts, config)
    for binary in (False, True):
        path = tmp_path / f"model-{binary}.dat"
        save_model(result.store, None, config, str(path), binary=binary)
        _, mf, _ = load_model(str(path))
        assert mf is None


def test_model_artifact_failures(tmp_path):
    with pytest.raises(ArtifactError):
        load_model(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ArtifactError):
        load_model(str(bad))
    with pytest.raises(ArtifactError):
        model_from_json({"format_version": 99})
    with pytest.raises(ArtifactError):
        model_from_json([1, 2, 3])

    result = trained_tiny()
    config = small_train_config(epochs=2)
    path = tmp_path / "model.bin"
    save_model(result.store, result.mf, config, str(path), binary=True)
    blob = path.read_bytes()
    truncated = tmp_path / "trunc.bin"
    truncated.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(ArtifactError):
        load_model(str(truncated))
    wrong = tmp_path / "wrong.bin"
    wrong.write_bytes(blob[:8] + (9).to_bytes(4, "little") + blob[12:])
    with pytest.raises(ArtifactError):
        load_model(str(wrong))


def test_model_json_is_plain_data():
    result = trained_tiny()
    data = model_to_json(result.store, result.mf, small_train_config(epochs=2))
    assert data["format_version"] == 1
    assert set(data) == {
        "format_version", "config", "concepts", "relations", "correlations", "mf",
    }
    import json

    json.dumps(data)
