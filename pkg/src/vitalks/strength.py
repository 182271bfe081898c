"""Bayesian pairwise-ranking inference of correlation strengths.

Each stored cross-structure pair is viewed through three lenses: the plain
triplet, the triplet with contextual concept vectors, and the triplet with a
contextual correlation vector.  Sigmoid-squashed scores of the three views
yield partial ranks between ambiguity types (correlation x view); a matrix
factorization trained with a pairwise-ranking pass turns those ranks into
per-pair strength distributions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .embedding import complex_score, sigmoid
from .errors import InvalidArgumentError, TrainingError
from .structures import ConceptRef

VIEWS = ("origin", "concept", "correlation")

PairKey = tuple[ConceptRef, ConceptRef]


def ambiguity_types(n_correlations: int) -> list[tuple[int, str]]:
    """All (correlation id, view) combinations, three views per correlation."""
    return [(c, view) for c in range(n_correlations) for view in VIEWS]


def type_index(correlation_id: int, view: str, n_correlations: int) -> int:
    if view not in VIEWS:
        raise InvalidArgumentError(f"unknown view {view!r}")
    if not 0 <= correlation_id < n_correlations:
        raise InvalidArgumentError(f"correlation id {correlation_id} out of range")
    return correlation_id * len(VIEWS) + VIEWS.index(view)


@dataclass
class MFParams:
    """Latent factors of the pairwise-ranking model."""

    pair_index: dict[PairKey, int]
    pair_vectors: np.ndarray  # (n_pairs, k)
    type_vectors: np.ndarray  # (n_types, k)

    @classmethod
    def init(
        cls, pairs: Sequence[PairKey], n_types: int, dim: int, seed: int
    ) -> "MFParams":
        ordered = sorted(pairs)
        rng = np.random.default_rng(seed)
        return cls(
            pair_index={p: i for i, p in enumerate(ordered)},
            pair_vectors=rng.normal(0.0, 0.1, size=(len(ordered), dim)),
            type_vectors=rng.normal(0.0, 0.1, size=(n_types, dim)),
        )

    def value(self, pair: PairKey, type_idx: int) -> float:
        return float(self.pair_vectors[self.pair_index[pair]] @ self.type_vectors[type_idx])

    def copy(self) -> "MFParams":
        return MFParams(
            pair_index=dict(self.pair_index),
            pair_vectors=self.pair_vectors.copy(),
            type_vectors=self.type_vectors.copy(),
        )


@dataclass(frozen=True)
class PartialRank:
    """Type i should score above type j for this pair."""

    pair: PairKey
    above: int
    below: int


def view_plausibilities(
    head: np.ndarray,
    correlation: np.ndarray,
    tail: np.ndarray,
    head_context: np.ndarray,
    tail_context: np.ndarray,
    correlation_context: np.ndarray,
) -> dict[str, float]:
    """Sigmoid-squashed scores of the three views of one pair."""
    return {
        "origin": float(sigmoid(complex_score(head, correlation, tail))),
        "concept": float(sigmoid(complex_score(head_context, correlation, tail_context))),
        "correlation": float(sigmoid(complex_score(head, correlation_context, tail))),
    }


def derive_partial_ranks(
    pair: PairKey,
    correlation_id: int,
    plausibilities: Mapping[str, float],
    n_correlations: int,
    threshold: float = 0.05,
) -> list[PartialRank]:
    """Strict ranks between the pair's own types when views differ by > threshold."""
    ranks: list[PartialRank] = []
    for vi in VIEWS:
        for vj in VIEWS:
            if vi == vj:
                continue
            if plausibilities[vi] - plausibilities[vj] > threshold:
                ranks.append(
                    PartialRank(
                        pair=pair,
                        above=type_index(correlation_id, vi, n_correlations),
                        below=type_index(correlation_id, vj, n_correlations),
                    )
                )
    return ranks


def bpr_loss(params: MFParams, ranks: Sequence[PartialRank], regularization: float) -> float:
    """Full ranking objective: negative log-sigmoid terms plus L2 on all factors."""
    total = regularization * (
        float(np.sum(params.pair_vectors**2)) + float(np.sum(params.type_vectors**2))
    )
    for rank in ranks:
        p = params.pair_index[rank.pair]
        x = float(
            params.pair_vectors[p]
            @ (params.type_vectors[rank.above] - params.type_vectors[rank.below])
        )
        total += float(np.logaddexp(0.0, -x))
    return total


def bpr_gradients(
    params: MFParams, ranks: Sequence[PartialRank], regularization: float
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic full-batch gradient of :func:`bpr_loss`."""
    gp = 2.0 * regularization * params.pair_vectors
    gt = 2.0 * regularization * params.type_vectors
    for rank in ranks:
        p = params.pair_index[rank.pair]
        diff = params.type_vectors[rank.above] - params.type_vectors[rank.below]
        x = float(params.pair_vectors[p] @ diff)
        coeff = -sigmoid(-x)
        gp[p] += coeff * diff
        gt[rank.above] += coeff * params.pair_vectors[p]
        gt[rank.below] -= coeff * params.pair_vectors[p]
    return gp, gt


def bpr_update(
    params: MFParams,
    ranks: Sequence[PartialRank],
    learning_rate: float,
    regularization: float,
    seed: int = 0,
) -> tuple[MFParams, float]:
    """One sequential pass of stochastic gradient descent over shuffled ranks.

    The returned loss is the objective at entry; with no ranks only the
    regularizer remains and the parameters are untouched.
    """
    loss = bpr_loss(params, ranks, regularization)
    if not np.isfinite(loss):
        raise TrainingError("ranking objective became non-finite")
    if not ranks:
        return params, loss
    order = np.random.default_rng(seed).permutation(len(ranks))
    for idx in order:
        rank = ranks[int(idx)]
        p = params.pair_index[rank.pair]
        vp = params.pair_vectors[p]
        ti = params.type_vectors[rank.above]
        tj = params.type_vectors[rank.below]
        x = float(vp @ (ti - tj))
        s = sigmoid(-x)
        gp = s * (ti - tj) - 2.0 * regularization * vp
        gi = s * vp - 2.0 * regularization * ti
        gj = -s * vp - 2.0 * regularization * tj
        params.pair_vectors[p] = vp + learning_rate * gp
        params.type_vectors[rank.above] = ti + learning_rate * gi
        params.type_vectors[rank.below] = tj + learning_rate * gj
    if not (
        np.all(np.isfinite(params.pair_vectors))
        and np.all(np.isfinite(params.type_vectors))
    ):
        raise TrainingError("ranking factors became non-finite during the pass")
    return params, loss


@dataclass
class StrengthTable:
    """Per-pair strength distributions over ambiguity types."""

    n_correlations: int
    pair_correlation: dict[PairKey, int]
    rows: dict[PairKey, dict[int, float]] = field(default_factory=dict)

    def strength(self, pair: PairKey, view: str) -> float:
        idx = type_index(self.pair_correlation[pair], view, self.n_correlations)
        return self.rows[pair][idx]

    def row(self, pair: PairKey) -> dict[int, float]:
        return dict(self.rows[pair])

    def csv_rows(self) -> list[tuple[str, str, int, str, float]]:
        out = []
        for pair in sorted(self.rows):
            head, tail = pair
            corr = self.pair_correlation[pair]
            for view in VIEWS:
                out.append(
                    (
                        f"{head[0]}:{head[1]}",
                        f"{tail[0]}:{tail[1]}",
                        corr,
                        view,
                        self.strength(pair, view),
                    )
                )
        return out


def compute_strengths(
    params: MFParams,
    pair_correlation: Mapping[PairKey, int],
    n_correlations: int,
    scope: str = "all",
) -> StrengthTable:
    """Softmax the factor products into strengths.

    ``scope="all"`` normalizes each pair over every ambiguity type;
    ``scope="per_correlation"`` normalizes over the pair's own three views.
    """
    if scope not in ("all", "per_correlation"):
        raise InvalidArgumentError(f"unknown strength softmax scope {scope!r}")
    table = StrengthTable(
        n_correlations=n_correlations, pair_correlation=dict(pair_correlation)
    )
    logits_all = params.pair_vectors @ params.type_vectors.T
    for pair, corr in sorted(pair_correlation.items()):
        row_logits = logits_all[params.pair_index[pair]]
        if scope == "all":
            indices = np.arange(row_logits.size)
        else:
            indices = np.array(
                [type_index(corr, view, n_correlations) for view in VIEWS]
            )
        selected = row_logits[indices]
        ex = np.exp(selected - selected.max())
        probs = ex / ex.sum()
        table.rows[pair] = {int(i): float(p) for i, p in zip(indices, probs)}
    return table


def strengths_to_csv(table: StrengthTable, path: str) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["head", "tail", "correlation", "view", "strength"])
        for row in table.csv_rows():
            writer.writerow([row[0], row[1], row[2], row[3], repr(row[4])])
