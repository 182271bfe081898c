"""Alternating training of the joint embedding space.

Each epoch: contextual vectors are rebuilt from walks and paths sampled once
at setup, view plausibilities turn into partial ranks, one ranking pass
refreshes the strength factors, a cross-structure step updates embeddings at
a damped rate, and a domain step with self-adversarial negatives follows at
the full rate.  Strengths enter the cross step only through dynamic margins;
no gradient flows from the ranking objective into the embeddings.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .config import TrainConfig
from .context import (
    PathCache,
    Walk,
    WalkCache,
    enumerate_correlation_paths,
    sample_walks,
)
from .embedding import (
    Adam,
    EmbeddingStore,
    dynamic_margin,
    log_sigmoid,
    score_batch,
    score_batch_grads,
    sigmoid,
)
from .errors import ArtifactError, InvalidArgumentError, TrainingError
from .strength import (
    MFParams,
    PartialRank,
    StrengthTable,
    VIEWS,
    ambiguity_types,
    bpr_update,
    compute_strengths,
    derive_partial_ranks,
    view_plausibilities,
)
from .structures import ConceptRef, CrossKS, DomainKS, TransitionStats

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
MODEL_MAGIC = b"CANDMDL1"


@dataclass
class PairContexts:
    """Per-epoch contextual vectors, constants within the epoch's updates."""

    concept: dict[ConceptRef, np.ndarray] = field(default_factory=dict)
    correlation: dict[tuple[ConceptRef, ConceptRef], np.ndarray] = field(
        default_factory=dict
    )


@dataclass
class TrainResult:
    store: EmbeddingStore
    mf: MFParams | None
    strengths: StrengthTable | None
    losses: list[dict[str, float]]
    strength_history: list[StrengthTable]
    diverged: bool = False


def _grad_buffers(store: EmbeddingStore) -> dict[str, np.ndarray]:
    return {
        "concepts": np.zeros_like(store.concepts),
        "relations": np.zeros_like(store.relations),
        "correlations": np.zeros_like(store.correlations),
    }


def _uniform_loss_terms(
    f_pos: np.ndarray, f_neg: np.ndarray, margins: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-triplet loss, positive coefficient, negative coefficients."""
    n = f_neg.shape[1]
    loss = -log_sigmoid(margins + f_pos) - np.mean(
        log_sigmoid(-f_neg - margins[:, None]), axis=1
    )
    coeff_pos = sigmoid(margins + f_pos) - 1.0
    coeff_neg = sigmoid(f_neg + margins[:, None]) / n
    return loss, coeff_pos, coeff_neg


def _adversarial_loss_terms(
    f_pos: np.ndarray, f_neg: np.ndarray, margin: float, temperature: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    logits = temperature * f_neg
    logits = logits - logits.max(axis=1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=1, keepdims=True)
    g = log_sigmoid(-f_neg - margin)
    g_bar = np.sum(weights * g, axis=1)
    loss = -log_sigmoid(margin + f_pos) - g_bar
    coeff_pos = sigmoid(margin + f_pos) - 1.0
    coeff_neg = -temperature * weights * (g - g_bar[:, None]) + weights * sigmoid(
        f_neg + margin
    )
    return loss, coeff_pos, coeff_neg


class CrossTrainingSet:
    """Index arrays over the cross structure plus cached walks and paths."""

    def __init__(
        self,
        store: EmbeddingStore,
        cross: CrossKS,
        domain: Mapping[str, DomainKS],
        transitions: Mapping[str, TransitionStats],
        config: TrainConfig,
    ):
        self.pairs = sorted(cross.triplets)
        self.pair_correlation = {
            pair: cross.triplets[pair].correlation_id for pair in self.pairs
        }
        self.n_correlations = len(cross.correlations)
        self.head_idx = np.array(
            [store.concept_index[p[0]] for p in self.pairs], dtype="int64"
        )
        self.tail_idx = np.array(
            [store.concept_index[p[1]] for p in self.pairs], dtype="int64"
        )
        self.corr_idx = np.array(
            [self.pair_correlation[p] for p in self.pairs], dtype="int64"
        )
        by_channel = cross.concepts_by_channel()
        self.cross_ids = {ch: set(ids) for ch, ids in by_channel.items()}
        self.pools = {
            ch: np.array(
                [store.concept_index[(ch, i)] for i in ids], dtype="int64"
            )
            for ch, ids in by_channel.items()
        }
        head_channels = {p[0][0] for p in self.pairs}
        tail_channels = {p[1][0] for p in self.pairs}
        if len(head_channels) > 1 or len(tail_channels) > 1:
            raise InvalidArgumentError("cross pairs must align on two channels")
        self.head_channel = head_channels.pop() if head_channels else None
        self.tail_channel = tail_channels.pop() if tail_channels else None

        # one walk set per cross concept and one path set per pair, fixed for
        # the whole run
        self.walks: dict[ConceptRef, list[Walk]] = {}
        self.walk_caches: dict[ConceptRef, WalkCache] = {}
        for ref in sorted({p[0] for p in self.pairs} | {p[1] for p in self.pairs}):
            channel, concept = ref
            stats = transitions.get(channel)
            ks = domain.get(channel)
            if stats is None or ks is None:
                walks: list[Walk] = []
            else:
                walks = sample_walks(
                    start=concept,
                    stats=stats,
                    domain_ks=ks,
                    cross_ids=self.cross_ids.get(channel, set()),
                    count=config.walk_count,
                    length=config.walk_length,
                    bias=config.exploration_bias,
                    seed=int(
                        np.random.default_rng(
                            [config.seed, 101, store.concept_index[ref]]
                        ).integers(2**31)
                    ),
                )
            self.walks[ref] = walks
            self.walk_caches[ref] = WalkCache(walks, channel, store)
        self.paths = {
            pair: enumerate_correlation_paths(
                pair[0], pair[1], cross, config.max_path_length
            )
            for pair in self.pairs
        }
        self.path_caches = {
            pair: PathCache(self.paths[pair], store) for pair in self.pairs
        }

    def contexts(self, store: EmbeddingStore) -> PairContexts:
        """Recompute contextual vectors; zero aggregates fall back to the plain vector."""
        ctx = PairContexts()
        for ref, cache in self.walk_caches.items():
            vec = cache.aggregate(store)
            if not np.any(vec):
                vec = store.concept(ref).copy()
            ctx.concept[ref] = vec
        for pair, cache in self.path_caches.items():
            vec = cache.aggregate(store)
            if not np.any(vec):
                vec = store.correlation(self.pair_correlation[pair]).copy()
            ctx.correlation[pair] = vec
        return ctx


def derive_ranks(
    setup: CrossTrainingSet,
    store: EmbeddingStore,
    contexts: PairContexts,
    threshold: float,
) -> list[PartialRank]:
    ranks: list[PartialRank] = []
    for pair in setup.pairs:
        head, tail = pair
        corr = setup.pair_correlation[pair]
        plaus = view_plausibilities(
            store.concept(head),
            store.correlation(corr),
            store.concept(tail),
            contexts.concept[head],
            contexts.concept[tail],
            contexts.correlation[pair],
        )
        ranks.extend(
            derive_partial_ranks(pair, corr, plaus, setup.n_correlations, threshold)
        )
    return ranks


def _margins(
    setup: CrossTrainingSet, strengths: StrengthTable | None, config: TrainConfig
) -> dict[str, np.ndarray]:
    out = {}
    for view in VIEWS:
        if strengths is None:
            out[view] = np.full(len(setup.pairs), config.margin)
        else:
            out[view] = np.array(
                [
                    dynamic_margin(
                        config.margin, strengths.strength(pair, view), config.margin_scale
                    )
                    for pair in setup.pairs
                ]
            )
    return out


def _corruptions(
    rng: np.random.Generator,
    head_idx: np.ndarray,
    tail_idx: np.ndarray,
    head_pool: np.ndarray,
    tail_pool: np.ndarray,
    n: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coin-flip corruption of head or tail with uniform pool draws."""
    m = head_idx.size
    coin = rng.integers(0, 2, size=(m, n))  # 0: corrupt head, 1: corrupt tail
    draw_head = head_pool[rng.integers(0, head_pool.size, size=(m, n))]
    draw_tail = tail_pool[rng.integers(0, tail_pool.size, size=(m, n))]
    neg_head = np.where(coin == 0, draw_head, head_idx[:, None])
    neg_tail = np.where(coin == 1, draw_tail, tail_idx[:, None])
    return coin, neg_head, neg_tail


def cross_epoch(
    store: EmbeddingStore,
    setup: CrossTrainingSet,
    contexts: PairContexts,
    strengths: StrengthTable | None,
    config: TrainConfig,
    adam: Adam | None = None,
    rng: np.random.Generator | None = None,
    infer_loss: float = 0.0,
) -> float:
    """One cross-structure epoch; updates the store in place at rate epsilon*eta.

    Returns the cross objective: the mean per-triplet loss (origin plus
    weighted contextual terms) plus the current ranking objective value.
    """
    if not setup.pairs:
        log.warning("cross structure is empty; nothing to train this epoch")
        return infer_loss
    rng = rng or np.random.default_rng(config.seed)
    adam = adam or Adam(store.params())
    n = config.negatives
    m = len(setup.pairs)
    margins = _margins(setup, strengths, config)
    grads = _grad_buffers(store)
    head_pool = setup.pools[setup.head_channel]
    tail_pool = setup.pools[setup.tail_channel]

    ctx_head = np.stack([contexts.concept[p[0]] for p in setup.pairs])
    ctx_tail = np.stack([contexts.concept[p[1]] for p in setup.pairs])
    ctx_corr = np.stack([contexts.correlation[p] for p in setup.pairs])

    def scatter(pos_h, pos_r, pos_t, coeff, h_rows, r_rows, t_rows, scale, skip=()):
        gh, gr, gt = score_batch_grads(pos_h, pos_r, pos_t)
        w = (coeff * scale)[:, None, None]
        if "h" not in skip:
            np.add.at(grads["concepts"], h_rows, w * gh)
        if "r" not in skip:
            np.add.at(grads["correlations"], r_rows, w * gr)
        if "t" not in skip:
            np.add.at(grads["concepts"], t_rows, w * gt)

    total = np.zeros(m)

    # origin triplets: every slot is a stored embedding
    coin, neg_head, neg_tail = _corruptions(
        rng, setup.head_idx, setup.tail_idx, head_pool, tail_pool, n
    )
    h = store.concepts[setup.head_idx]
    r = store.correlations[setup.corr_idx]
    t = store.concepts[setup.tail_idx]
    f_pos = score_batch(h, r, t)
    nh = store.concepts[neg_head.reshape(-1)]
    nr = store.correlations[np.repeat(setup.corr_idx, n)]
    nt = store.concepts[neg_tail.reshape(-1)]
    f_neg = score_batch(nh, nr, nt).reshape(m, n)
    loss, c_pos, c_neg = _uniform_loss_terms(f_pos, f_neg, margins["origin"])
    total += loss
    scale = 1.0 / m
    scatter(h, r, t, c_pos, setup.head_idx, setup.corr_idx, setup.tail_idx, scale)
    scatter(
        nh,
        nr,
        nt,
        c_neg.reshape(-1),
        neg_head.reshape(-1),
        np.repeat(setup.corr_idx, n),
        neg_tail.reshape(-1),
        scale,
    )

    lam = config.context_weight
    ctx_scale = lam * 0.5 / m

    # concept view: contextual endpoints are constants, the correlation trains;
    # negatives swap the corrupted endpoint for a plain stored embedding
    coin, neg_head, neg_tail = _corruptions(
        rng, setup.head_idx, setup.tail_idx, head_pool, tail_pool, n
    )
    f_pos = score_batch(ctx_head, r, ctx_tail)
    rep = lambda a: np.repeat(a, n, axis=0)
    nh = np.where(
        (coin == 0).reshape(-1)[:, None, None],
        store.concepts[neg_head.reshape(-1)],
        rep(ctx_head),
    )
    nt = np.where(
        (coin == 1).reshape(-1)[:, None, None],
        store.concepts[neg_tail.reshape(-1)],
        rep(ctx_tail),
    )
    f_neg = score_batch(nh, nr, nt).reshape(m, n)
    loss, c_pos, c_neg = _uniform_loss_terms(f_pos, f_neg, margins["concept"])
    total += lam * 0.5 * loss
    scatter(
        ctx_head, r, ctx_tail, c_pos, setup.head_idx, setup.corr_idx, setup.tail_idx,
        ctx_scale, skip=("h", "t"),
    )
    gh, gr, gt = score_batch_grads(nh, nr, nt)
    w = (c_neg.reshape(-1) * ctx_scale)[:, None, None]
    head_mask = (coin == 0).reshape(-1)
    tail_mask = ~head_mask
    np.add.at(grads["concepts"], neg_head.reshape(-1)[head_mask], (w * gh)[head_mask])
    np.add.at(grads["concepts"], neg_tail.reshape(-1)[tail_mask], (w * gt)[tail_mask])
    np.add.at(grads["correlations"], np.repeat(setup.corr_idx, n), w * gr)

    # correlation view: the contextual relation is a constant, endpoints train
    coin, neg_head, neg_tail = _corruptions(
        rng, setup.head_idx, setup.tail_idx, head_pool, tail_pool, n
    )
    f_pos = score_batch(h, ctx_corr, t)
    nh = store.concepts[neg_head.reshape(-1)]
    nt = store.concepts[neg_tail.reshape(-1)]
    nr_ctx = rep(ctx_corr)
    f_neg = score_batch(nh, nr_ctx, nt).reshape(m, n)
    loss, c_pos, c_neg = _uniform_loss_terms(f_pos, f_neg, margins["correlation"])
    total += lam * 0.5 * loss
    scatter(
        h, ctx_corr, t, c_pos, setup.head_idx, setup.corr_idx, setup.tail_idx,
        ctx_scale, skip=("r",),
    )
    scatter(
        nh,
        nr_ctx,
        nt,
        c_neg.reshape(-1),
        neg_head.reshape(-1),
        np.repeat(setup.corr_idx, n),
        neg_tail.reshape(-1),
        ctx_scale,
        skip=("r",),
    )

    grads["correlations"][:, 1, :] = 0.0
    grads["relations"][:] = 0.0
    adam.step(grads, lr=config.loss_balance * config.learning_rate)
    store.enforce_correlation_symmetry()
    return float(np.mean(total)) + infer_loss


class DomainTrainingSet:
    """Positive triplet arrays of one domain structure."""

    def __init__(self, store: EmbeddingStore, ks: DomainKS, channel: str):
        triplets = sorted(ks.triplets)
        self.channel = channel
        self.head_idx = np.array(
            [store.concept_index[(channel, h)] for h, _, _ in triplets], dtype="int64"
        )
        self.rel_idx = np.array([r for _, r, _ in triplets], dtype="int64")
        self.tail_idx = np.array(
            [store.concept_index[(channel, t)] for _, _, t in triplets], dtype="int64"
        )
        self.pool = np.array(
            [store.concept_index[(channel, c)] for c in ks.concepts()], dtype="int64"
        )


def domain_epoch(
    store: EmbeddingStore,
    domain_sets: Sequence[DomainTrainingSet],
    config: TrainConfig,
    adam: Adam | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """One self-adversarial epoch over each domain structure, at rate eta."""
    rng = rng or np.random.default_rng(config.seed)
    adam = adam or Adam(store.params())
    grads = _grad_buffers(store)
    n = config.negatives
    total = 0.0
    touched = False
    for dset in domain_sets:
        m = dset.head_idx.size
        if m == 0 or dset.pool.size == 0:
            continue
        touched = True
        coin, neg_head, neg_tail = _corruptions(
            rng, dset.head_idx, dset.tail_idx, dset.pool, dset.pool, n
        )
        h = store.concepts[dset.head_idx]
        r = store.relations[dset.rel_idx]
        t = store.concepts[dset.tail_idx]
        f_pos = score_batch(h, r, t)
        nh = store.concepts[neg_head.reshape(-1)]
        nr = store.relations[np.repeat(dset.rel_idx, n)]
        nt = store.concepts[neg_tail.reshape(-1)]
        f_neg = score_batch(nh, nr, nt).reshape(m, n)
        loss, c_pos, c_neg = _adversarial_loss_terms(
            f_pos, f_neg, config.margin, config.adversarial_temperature
        )
        total += float(np.sum(loss))

        gh, gr, gt = score_batch_grads(h, r, t)
        w = c_pos[:, None, None]
        np.add.at(grads["concepts"], dset.head_idx, w * gh)
        np.add.at(grads["relations"], dset.rel_idx, w * gr)
        np.add.at(grads["concepts"], dset.tail_idx, w * gt)

        gh, gr, gt = score_batch_grads(nh, nr, nt)
        w = c_neg.reshape(-1)[:, None, None]
        np.add.at(grads["concepts"], neg_head.reshape(-1), w * gh)
        np.add.at(grads["relations"], np.repeat(dset.rel_idx, n), w * gr)
        np.add.at(grads["concepts"], neg_tail.reshape(-1), w * gt)
    if not touched:
        log.warning("domain structures are empty; nothing to train this epoch")
        return 0.0
    grads["correlations"][:] = 0.0
    adam.step(grads, lr=config.learning_rate)
    store.enforce_correlation_symmetry()
    return total


def train(
    domain: Mapping[str, DomainKS],
    transitions: Mapping[str, TransitionStats],
    cross: CrossKS,
    concept_counts: Mapping[str, int],
    config: TrainConfig,
    keep_strength_history: bool = False,
) -> TrainResult:
    """Run the full alternating optimization and return the trained state."""
    config.validate()
    refs = [
        (channel, i)
        for channel in sorted(concept_counts)
        for i in range(concept_counts[channel])
    ]
    n_relations = max(
        (ks.relations.count for ks in domain.values()), default=4
    )
    n_correlations = len(cross.correlations)
    store = EmbeddingStore.init(
        refs, n_relations, max(n_correlations, 1), config.embedding_dim, config.seed
    )
    setup = CrossTrainingSet(store, cross, domain, transitions, config)
    domain_sets = [
        DomainTrainingSet(store, ks, channel) for channel, ks in sorted(domain.items())
    ]
    mf: MFParams | None = None
    if setup.pairs and n_correlations:
        mf = MFParams.init(
            setup.pairs,
            len(ambiguity_types(n_correlations)),
            config.mf_dim,
            config.seed + 1,
        )
    adam = Adam(store.params())
    losses: list[dict[str, float]] = []
    history: list[StrengthTable] = []
    strengths: StrengthTable | None = None
    last_good = store.copy()
    diverged = False
    for epoch in range(config.epochs):
        contexts = setup.contexts(store)
        infer_loss = 0.0
        if mf is not None:
            ranks = derive_ranks(setup, store, contexts, config.rank_threshold)
            shuffle_seed = int(
                np.random.default_rng([config.seed, 2, epoch]).integers(2**31)
            )
            mf, infer_loss = bpr_update(
                mf,
                ranks,
                config.bpr_learning_rate,
                config.bpr_regularization,
                seed=shuffle_seed,
            )
            strengths = compute_strengths(
                mf,
                setup.pair_correlation,
                setup.n_correlations,
                config.strength_softmax_scope,
            )
            if keep_strength_history:
                history.append(strengths)
        cross_rng = np.random.default_rng([config.seed, 3, epoch])
        l_cross = cross_epoch(
            store, setup, contexts, strengths, config, adam, cross_rng, infer_loss
        )
        domain_rng = np.random.default_rng([config.seed, 4, epoch])
        l_domain = domain_epoch(store, domain_sets, config, adam, domain_rng)
        losses.append({"cross": l_cross, "domain": l_domain, "infer": infer_loss})
        finite = (
            np.isfinite(l_cross)
            and np.isfinite(l_domain)
            and np.all(np.isfinite(store.concepts))
            and np.all(np.isfinite(store.relations))
            and np.all(np.isfinite(store.correlations))
        )
        if not finite:
            log.warning("loss became non-finite at epoch %d; keeping last state", epoch)
            store = last_good
            diverged = True
            break
        last_good = store.copy()
    return TrainResult(
        store=store,
        mf=mf,
        strengths=strengths,
        losses=losses,
        strength_history=history,
        diverged=diverged,
    )


def _vec_json(vec: np.ndarray) -> dict:
    return {"re": [float(x) for x in vec[0]], "im": [float(x) for x in vec[1]]}


def _vec_from_json(data: dict, dim: int) -> np.ndarray:
    re = np.asarray(data["re"], dtype="float64")
    im = np.asarray(data["im"], dtype="float64")
    if re.size != dim or im.size != dim:
        raise ArtifactError("embedding dimension mismatch in model artifact")
    return np.stack([re, im])


def model_to_json(
    store: EmbeddingStore, mf: MFParams | None, config: TrainConfig
) -> dict:
    from dataclasses import asdict

    return {
        "format_version": MODEL_FORMAT_VERSION,
        "config": asdict(config),
        "concepts": {
            f"{ref[0]}:{ref[1]}": _vec_json(store.concepts[idx])
            for ref, idx in sorted(store.concept_index.items())
        },
        "relations": {
            str(i): _vec_json(store.relations[i]) for i in range(len(store.relations))
        },
        "correlations": {
            str(i): _vec_json(store.correlations[i])
            for i in range(len(store.correlations))
        },
        "mf": None
        if mf is None
        else {
            "pairs": {
                f"{p[0][0]}:{p[0][1]}|{p[1][0]}:{p[1][1]}": [
                    float(x) for x in mf.pair_vectors[i]
                ]
                for p, i in sorted(mf.pair_index.items())
            },
            "types": [[float(x) for x in row] for row in mf.type_vectors],
        },
    }


def _parse_ref(text: str) -> ConceptRef:
    channel, _, concept = text.rpartition(":")
    if not channel:
        raise ArtifactError(f"malformed concept reference {text!r}")
    return (channel, int(concept))


def model_from_json(data: dict) -> tuple[EmbeddingStore, MFParams | None, TrainConfig]:
    if not isinstance(data, dict):
        raise ArtifactError("model artifact must be a JSON object")
    if data.get("format_version") != MODEL_FORMAT_VERSION:
        raise ArtifactError(
            f"unsupported model format_version: {data.get('format_version')!r}"
        )
    try:
        config = TrainConfig(**data["config"])
        dim = config.embedding_dim
        refs = sorted(_parse_ref(k) for k in data["concepts"])
        concept_index = {ref: i for i, ref in enumerate(refs)}
        concepts = np.stack(
            [
                _vec_from_json(data["concepts"][f"{ref[0]}:{ref[1]}"], dim)
                for ref in refs
            ]
        )
        rel_keys = sorted(data["relations"], key=int)
        relations = np.stack(
            [_vec_from_json(data["relations"][k], dim) for k in rel_keys]
        )
        corr_keys = sorted(data["correlations"], key=int)
        correlations = np.stack(
            [_vec_from_json(data["correlations"][k], dim) for k in corr_keys]
        )
        store = EmbeddingStore(
            dim=dim,
            concept_index=concept_index,
            concepts=concepts,
            relations=relations,
            correlations=correlations,
        )
        mf = None
        if data.get("mf") is not None:
            pair_keys = sorted(data["mf"]["pairs"])
            pair_index = {}
            vectors = []
            for i, key in enumerate(pair_keys):
                a, _, b = key.partition("|")
                pair_index[(_parse_ref(a), _parse_ref(b))] = i
                vectors.append(np.asarray(data["mf"]["pairs"][key], dtype="float64"))
            mf = MFParams(
                pair_index=pair_index,
                pair_vectors=np.stack(vectors) if vectors else np.zeros((0, 1)),
                type_vectors=np.asarray(data["mf"]["types"], dtype="float64"),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"malformed model artifact: {exc}")
    return store, mf, config


def save_model(
    store: EmbeddingStore,
    mf: MFParams | None,
    config: TrainConfig,
    path: str,
    binary: bool = False,
) -> None:
    if binary:
        _save_model_binary(store, mf, config, path)
        return
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json(store, mf, config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path: str) -> tuple[EmbeddingStore, MFParams | None, TrainConfig]:
    try:
        with open(path, "rb") as fh:
            head = fh.read(len(MODEL_MAGIC))
            if head == MODEL_MAGIC:
                fh.seek(0)
                return _load_model_binary(fh.read())
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ArtifactError(f"model file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"model file {path} is not valid JSON: {exc}")
    return model_from_json(data)


def _save_model_binary(
    store: EmbeddingStore, mf: MFParams | None, config: TrainConfig, path: str
) -> None:
    """Compact little-endian container: a 16-byte header then a JSON index
    followed by raw float64 arrays."""
    import dataclasses

    header = MODEL_MAGIC + struct.pack("<I", MODEL_FORMAT_VERSION) + b"\x00" * 4
    index = {
        "config": dataclasses.asdict(config),
        "concepts": [f"{r[0]}:{r[1]}" for r in sorted(store.concept_index)],
        "n_relations": int(len(store.relations)),
        "n_correlations": int(len(store.correlations)),
        "mf_pairs": None
        if mf is None
        else [
            f"{p[0][0]}:{p[0][1]}|{p[1][0]}:{p[1][1]}" for p in sorted(mf.pair_index)
        ],
        "mf_dim": None if mf is None else int(mf.pair_vectors.shape[1]),
        "n_types": None if mf is None else int(mf.type_vectors.shape[0]),
    }
    index_bytes = json.dumps(index, sort_keys=True).encode("utf-8")
    refs = sorted(store.concept_index)
    order = np.array([store.concept_index[r] for r in refs], dtype="int64")
    payload = [
        store.concepts[order].astype("<f8").tobytes(),
        store.relations.astype("<f8").tobytes(),
        store.correlations.astype("<f8").tobytes(),
    ]
    if mf is not None:
        pair_order = np.array(
            [mf.pair_index[p] for p in sorted(mf.pair_index)], dtype="int64"
        )
        payload.append(mf.pair_vectors[pair_order].astype("<f8").tobytes())
        payload.append(mf.type_vectors.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(struct.pack("<Q", len(index_bytes)))
        fh.write(index_bytes)
        for chunk in payload:
            fh.write(chunk)


def _load_model_binary(blob: bytes) -> tuple[EmbeddingStore, MFParams | None, TrainConfig]:
    if blob[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ArtifactError("bad magic in binary model file")
    (version,) = struct.unpack_from("<I", blob, len(MODEL_MAGIC))
    if version != MODEL_FORMAT_VERSION:
        raise ArtifactError(f"unsupported binary model version {version}")
    off = 16
    (index_len,) = struct.unpack_from("<Q", blob, off)
    off += 8
    try:
        index = json.loads(blob[off : off + index_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"malformed binary model index: {exc}")
    off += index_len
    config = TrainConfig(**index["config"])
    dim = config.embedding_dim
    refs = [_parse_ref(r) for r in index["concepts"]]

    def take(count: int, shape: tuple[int, ...]) -> np.ndarray:
        nonlocal off
        size = int(np.prod(shape)) * 8
        if off + size > len(blob):
            raise ArtifactError("truncated binary model file")
        arr = np.frombuffer(blob, dtype="<f8", count=int(np.prod(shape)), offset=off)
        off += size
        return arr.reshape(shape).astype("float64")

    concepts = take(0, (len(refs), 2, dim))
    relations = take(0, (index["n_relations"], 2, dim))
    correlations = take(0, (index["n_correlations"], 2, dim))
    store = EmbeddingStore(
        dim=dim,
        concept_index={ref: i for i, ref in enumerate(refs)},
        concepts=concepts,
        relations=relations,
        correlations=correlations,
    )
    mf = None
    if index.get("mf_pairs") is not None:
        pairs = []
        for key in index["mf_pairs"]:
            a, _, b = key.partition("|")
            pairs.append((_parse_ref(a), _parse_ref(b)))
        pair_vectors = take(0, (len(pairs), index["mf_dim"]))
        type_vectors = take(0, (index["n_types"], index["mf_dim"]))
        mf = MFParams(
            pair_index={p: i for i, p in enumerate(pairs)},
            pair_vectors=pair_vectors,
            type_vectors=type_vectors,
        )
    return store, mf, config
