"""Structure-guided exploration and contextual aggregation.

Walks over a domain structure follow transition probabilities reshaped by an
exploration bias: successors that stay near the previous node or belong to
the cross structure are discouraged, while moves that leave the cross
structure's surroundings from a cross-member node are encouraged.  Walks
grouped by their relation sequence aggregate into a contextual concept
vector; simple paths through the cross structure aggregate into a contextual
correlation vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .embedding import EmbeddingStore, complex_score, score_batch
from .errors import InvalidArgumentError
from .structures import ConceptRef, CrossKS, DomainKS, TransitionStats


@dataclass(frozen=True)
class WalkStep:
    relation: int
    concept: int
    probability: float


@dataclass(frozen=True)
class Walk:
    start: int
    steps: tuple[WalkStep, ...]

    def metapath(self) -> tuple[int, ...]:
        return tuple(s.relation for s in self.steps)

    def cumulative_probabilities(self) -> np.ndarray:
        return np.cumprod([s.probability for s in self.steps])


@dataclass(frozen=True)
class CorrelationPath:
    """Simple path between two cross-structure concepts; length = edge count."""

    nodes: tuple[ConceptRef, ...]
    correlations: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.correlations)


def _distance_class(
    previous: int | None, y: int, adjacency: dict[int, set[int]]
) -> int:
    """0, 1, 2, or 3 for hop distance > 2 (or no previous node)."""
    if previous is None:
        return 3
    if y == previous:
        return 0
    neigh_prev = adjacency.get(previous, set())
    if y in neigh_prev:
        return 1
    if neigh_prev & adjacency.get(y, set()):
        return 2
    return 3


def _weights_for(
    x: int,
    previous: int | None,
    row: dict[int, float],
    adjacency: dict[int, set[int]],
    cross_ids: set[int],
    bias: float,
) -> dict[int, float]:
    weights: dict[int, float] = {}
    x_in_cross = x in cross_ids
    for y, w in row.items():
        d = _distance_class(previous, y, adjacency)
        if d <= 1 or y in cross_ids:
            weights[y] = w / bias
        elif d == 2 and x_in_cross and y not in cross_ids:
            weights[y] = w * bias
        else:
            weights[y] = w
    return weights


def exploration_weights(
    x: int,
    previous: int | None,
    stats: TransitionStats,
    domain_ks: DomainKS,
    cross_ids: set[int],
    bias: float,
) -> dict[int, float]:
    """Unnormalized successor weights for one step of guided exploration."""
    if bias <= 1.0:
        raise InvalidArgumentError("exploration bias must be greater than 1")
    return _weights_for(x, previous, stats.row(x), domain_ks.adjacency(), cross_ids, bias)


def step_distribution(
    x: int,
    previous: int | None,
    stats: TransitionStats,
    domain_ks: DomainKS,
    cross_ids: set[int],
    bias: float,
) -> dict[int, float]:
    """Normalized step distribution; empty when x has no successor."""
    weights = exploration_weights(x, previous, stats, domain_ks, cross_ids, bias)
    total = sum(weights.values())
    if total <= 0:
        return {}
    return {y: w / total for y, w in sorted(weights.items())}


def sample_walks(
    start: int,
    stats: TransitionStats,
    domain_ks: DomainKS,
    cross_ids: set[int],
    count: int,
    length: int,
    bias: float,
    seed: int,
) -> list[Walk]:
    """Sample ``count`` guided walks of up to ``length`` steps from ``start``.

    Walks follow directed transition edges only and stop early at dead ends.
    Each step records the dominant gap relation of the traversed edge and the
    normalized probability of the chosen successor.
    """
    if bias <= 1.0:
        raise InvalidArgumentError("exploration bias must be greater than 1")
    adjacency = domain_ks.adjacency()
    edge_rel = domain_ks.edge_relation()
    rows = {h: stats.row(h) for h in stats.heads()}
    rng = np.random.default_rng(seed)
    walks: list[Walk] = []
    for _ in range(count):
        x = start
        previous: int | None = None
        steps: list[WalkStep] = []
        for _ in range(length):
            row = rows.get(x, {})
            weights = _weights_for(x, previous, row, adjacency, cross_ids, bias)
            if not weights:
                break
            ys = sorted(weights)
            probs = np.array([weights[y] for y in ys], dtype="float64")
            probs /= probs.sum()
            choice = int(rng.choice(len(ys), p=probs))
            y = ys[choice]
            steps.append(
                WalkStep(
                    relation=edge_rel.get((x, y), 0),
                    concept=y,
                    probability=float(probs[choice]),
                )
            )
            previous, x = x, y
        walks.append(Walk(start=start, steps=tuple(steps)))
    return walks


def metapath_aggregate(
    walks: Sequence[Walk],
    store: EmbeddingStore,
    channel: str,
) -> np.ndarray:
    """Aggregate walks into a contextual concept vector, flattened to 2d reals.

    Within one walk the explored concepts are weighted by a softmax of their
    cumulative walk probabilities; walks average within their metapath group
    and group vectors average into the output.  All-empty walks give zeros.
    """
    groups: dict[tuple[int, ...], list[Walk]] = {}
    for walk in walks:
        if walk.steps:
            groups.setdefault(walk.metapath(), []).append(walk)
    out = np.zeros((2, store.dim))
    if not groups:
        return out.reshape(-1)
    for key in sorted(groups):
        group = groups[key]
        acc = np.zeros((2, store.dim))
        for walk in group:
            probs = walk.cumulative_probabilities()
            weights = np.exp(probs - probs.max())
            weights /= weights.sum()
            for w, step in zip(weights, walk.steps):
                acc += w * store.concept((channel, step.concept))
        out += acc / len(group)
    out /= len(groups)
    return out.reshape(-1)


def enumerate_correlation_paths(
    head: ConceptRef,
    tail: ConceptRef,
    cross: CrossKS,
    max_length: int,
) -> list[CorrelationPath]:
    """All simple paths of length 2..max_length between two cross concepts.

    The direct edge never counts as a path.  Enumeration is a depth-first
    search expanding neighbors in lexicographic order, so the result order is
    deterministic.
    """
    if max_length < 2:
        return []
    adjacency = cross.adjacency()
    out: list[CorrelationPath] = []
    nodes: list[ConceptRef] = [head]
    corrs: list[int] = []
    visited = {head}

    def visit(current: ConceptRef) -> None:
        for neighbor in adjacency.get(current, ()):  # lexicographic order
            if neighbor == tail:
                if len(corrs) + 1 >= 2:
                    triplet = cross.lookup(current, tail)
                    assert triplet is not None
                    out.append(
                        CorrelationPath(
                            nodes=tuple(nodes) + (tail,),
                            correlations=tuple(corrs) + (triplet.correlation_id,),
                        )
                    )
                continue
            if neighbor in visited or len(corrs) + 1 >= max_length:
                continue
            triplet = cross.lookup(current, neighbor)
            assert triplet is not None
            visited.add(neighbor)
            nodes.append(neighbor)
            corrs.append(triplet.correlation_id)
            visit(neighbor)
            corrs.pop()
            nodes.pop()
            visited.discard(neighbor)

    visit(head)
    return out


def depth_aware_aggregate(
    paths: Sequence[CorrelationPath],
    store: EmbeddingStore,
    scorer: Callable[[np.ndarray, np.ndarray, np.ndarray], float] | None = None,
) -> np.ndarray:
    """Aggregate paths into a contextual correlation vector (2d reals).

    Edges of one path are weighted by a softmax of their triplet scores;
    paths average within their length group and the group vectors average
    into the output.  No paths give zeros.
    """
    scorer = scorer or complex_score
    by_length: dict[int, list[CorrelationPath]] = {}
    for path in paths:
        if path.length:
            by_length.setdefault(path.length, []).append(path)
    out = np.zeros((2, store.dim))
    if not by_length:
        return out.reshape(-1)
    for length in sorted(by_length):
        group = by_length[length]
        acc = np.zeros((2, store.dim))
        for path in group:
            scores = np.array(
                [
                    scorer(
                        store.concept(path.nodes[j]),
                        store.correlation(path.correlations[j]),
                        store.concept(path.nodes[j + 1]),
                    )
                    for j in range(path.length)
                ]
            )
            weights = np.exp(scores - scores.max())
            weights /= weights.sum()
            for w, corr in zip(weights, path.correlations):
                acc += w * store.correlation(corr)
        out += acc / len(group)
    out /= len(by_length)
    return out.reshape(-1)


class WalkCache:
    """Constant aggregation coefficients of a walk set, for fast re-aggregation.

    The softmax weights of a walk depend only on its recorded probabilities,
    so the contextual concept vector is a fixed linear combination of concept
    embeddings; this cache stores the combination.
    """

    def __init__(self, walks: Sequence[Walk], channel: str, store: EmbeddingStore):
        coeffs: dict[int, float] = {}
        groups: dict[tuple[int, ...], list[Walk]] = {}
        for walk in walks:
            if walk.steps:
                groups.setdefault(walk.metapath(), []).append(walk)
        self.empty = not groups
        for key in sorted(groups):
            group = groups[key]
            for walk in group:
                probs = walk.cumulative_probabilities()
                weights = np.exp(probs - probs.max())
                weights /= weights.sum()
                for w, step in zip(weights, walk.steps):
                    idx = store.concept_index[(channel, step.concept)]
                    coeffs[idx] = coeffs.get(idx, 0.0) + w / (len(group) * len(groups))
        items = sorted(coeffs.items())
        self.indices = np.array([i for i, _ in items], dtype="int64")
        self.weights = np.array([w for _, w in items], dtype="float64")

    def aggregate(self, store: EmbeddingStore) -> np.ndarray:
        if self.empty:
            return np.zeros((2, store.dim))
        vecs = store.concepts[self.indices]
        return np.tensordot(self.weights, vecs, axes=(0, 0))


class PathCache:
    """Index arrays over a fixed path set, for batched re-aggregation."""

    def __init__(self, paths: Sequence[CorrelationPath], store: EmbeddingStore):
        paths = [p for p in paths if p.length]
        self.empty = not paths
        if self.empty:
            return
        heads: list[int] = []
        corrs: list[int] = []
        tails: list[int] = []
        offsets = [0]
        lengths = []
        for path in paths:
            for j in range(path.length):
                heads.append(store.concept_index[path.nodes[j]])
                corrs.append(path.correlations[j])
                tails.append(store.concept_index[path.nodes[j + 1]])
            offsets.append(len(heads))
            lengths.append(path.length)
        self.edge_head = np.array(heads, dtype="int64")
        self.edge_corr = np.array(corrs, dtype="int64")
        self.edge_tail = np.array(tails, dtype="int64")
        self.offsets = np.array(offsets[:-1], dtype="int64")
        self.edge_counts = np.diff(np.array(offsets, dtype="int64"))
        lengths_arr = np.array(lengths, dtype="int64")
        self.groups = [
            np.flatnonzero(lengths_arr == ln) for ln in sorted(set(lengths))
        ]

    def aggregate(self, store: EmbeddingStore) -> np.ndarray:
        if self.empty:
            return np.zeros((2, store.dim))
        scores = score_batch(
            store.concepts[self.edge_head],
            store.correlations[self.edge_corr],
            store.concepts[self.edge_tail],
        )
        path_max = np.maximum.reduceat(scores, self.offsets)
        ex = np.exp(scores - np.repeat(path_max, self.edge_counts))
        sums = np.add.reduceat(ex, self.offsets)
        beta = ex / np.repeat(sums, self.edge_counts)
        contrib = beta[:, None, None] * store.correlations[self.edge_corr]
        per_path = np.add.reduceat(contrib, self.offsets, axis=0)
        out = np.zeros((2, store.dim))
        for idx in self.groups:
            out += per_path[idx].mean(axis=0)
        return out / len(self.groups)


def walks_to_json(concept: ConceptRef, walks: Iterable[Walk]) -> list[dict]:
    out = []
    for i, walk in enumerate(walks):
        out.append(
            {
                "concept": f"{concept[0]}:{concept[1]}",
                "walk_index": i,
                "steps": [
                    {
                        "relation": s.relation,
                        "concept": s.concept,
                        "probability": s.probability,
                    }
                    for s in walk.steps
                ],
            }
        )
    return out


def paths_to_json(
    head: ConceptRef, tail: ConceptRef, paths: Iterable[CorrelationPath]
) -> list[dict]:
    return [
        {
            "head": f"{head[0]}:{head[1]}",
            "tail": f"{tail[0]}:{tail[1]}",
            "length": p.length,
            "nodes": [f"{c}:{i}" for c, i in p.nodes],
            "correlations": list(p.correlations),
        }
        for p in paths
    ]
