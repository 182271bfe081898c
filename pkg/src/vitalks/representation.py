"""Series-level feature vectors from trained embeddings.

A series is summarized by the structure triplets that actually occurred in
it, each weighted by a recency decay, averaged, and concatenated across
channels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .embedding import EmbeddingStore
from .errors import DataError, InvalidArgumentError
from .series import Assignment
from .structures import DomainKS


@dataclass(frozen=True)
class TripletOccurrence:
    head: int
    relation: int
    tail: int
    head_minute: float
    occurrence_minute: float


def _occurrence_arrays(
    assignments: Sequence[Assignment], ks: DomainKS
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Sorted (head, relation, tail, head_minute, occurrence_minute) arrays."""
    empty = (np.empty(0, dtype="int64"),) * 3 + (np.empty(0),) * 2
    if not assignments or not ks.triplets:
        return empty
    starts = np.array([a.start_minute for a in assignments], dtype="float64")
    ids = np.array([a.concept_id for a in assignments], dtype="int64")
    order = np.lexsort((ids, starts))
    starts = starts[order]
    ids = ids[order]
    n = starts.size
    i_idx, j_idx = np.triu_indices(n, k=1)
    gaps = starts[j_idx] - starts[i_idx]
    keep = gaps > 0
    i_idx, j_idx, gaps = i_idx[keep], j_idx[keep], gaps[keep]
    if i_idx.size == 0:
        return empty
    bounds = np.asarray(ks.relations.bounds)
    relations = np.searchsorted(bounds, gaps, side="right")
    max_id = int(
        max(max(h for h, _, _ in ks.triplets), max(t for _, _, t in ks.triplets))
    )
    lookup = np.zeros((max_id + 1, ks.relations.count, max_id + 1), dtype=bool)
    for (h, r, t) in ks.triplets:
        lookup[h, r, t] = True
    heads = ids[i_idx]
    tails = ids[j_idx]
    in_range = (heads <= max_id) & (tails <= max_id)
    valid = np.zeros(heads.size, dtype=bool)
    valid[in_range] = lookup[heads[in_range], relations[in_range], tails[in_range]]
    heads, relations, tails = heads[valid], relations[valid], tails[valid]
    head_minutes = starts[i_idx[valid]]
    occ_minutes = starts[j_idx[valid]]
    rank = np.lexsort((relations, tails, heads, head_minutes, occ_minutes))
    return (
        heads[rank],
        relations[rank],
        tails[rank],
        head_minutes[rank],
        occ_minutes[rank],
    )


def occurred_triplets(
    assignments: Sequence[Assignment], ks: DomainKS
) -> list[TripletOccurrence]:
    """Ordered assignment pairs whose triplet exists in the trained structure.

    Occurrences are sorted by when they complete, oldest first, so the last
    entry is the most recent evidence.
    """
    heads, relations, tails, head_minutes, occ_minutes = _occurrence_arrays(
        assignments, ks
    )
    return [
        TripletOccurrence(
            head=int(h),
            relation=int(r),
            tail=int(t),
            head_minute=float(hm),
            occurrence_minute=float(om),
        )
        for h, r, t, hm, om in zip(heads, relations, tails, head_minutes, occ_minutes)
    ]


def triplet_importance(total: int, position: int, decay: float) -> float:
    """Recency weight of the occurrence at 1-based ``position`` out of ``total``."""
    if not 0.0 < decay <= 1.0:
        raise InvalidArgumentError(f"decay must be in (0, 1], got {decay}")
    if not 1 <= position <= total:
        raise InvalidArgumentError(f"position must be in [1, {total}], got {position}")
    return float(decay ** (total - position))


def series_representation(
    assignments: Sequence[Assignment],
    ks: DomainKS,
    store: EmbeddingStore,
    channel: str,
    decay: float = 0.8,
) -> np.ndarray:
    """Decay-weighted mean of flattened occurrence triplets; zeros if none."""
    if not 0.0 < decay <= 1.0:
        raise InvalidArgumentError(f"decay must be in (0, 1], got {decay}")
    heads, relations, tails, _, _ = _occurrence_arrays(assignments, ks)
    width = 6 * store.dim
    total = heads.size
    if total == 0:
        return np.zeros(width)
    max_id = int(max(heads.max(), tails.max()))
    index = np.array(
        [store.concept_index.get((channel, i), -1) for i in range(max_id + 1)],
        dtype="int64",
    )
    used = np.unique(np.concatenate([heads, tails]))
    if np.any(index[used] < 0):
        raise DataError(f"concept missing from embedding store on channel {channel}")
    flat_concepts = store.concepts.reshape(store.concepts.shape[0], 2 * store.dim)
    flat_relations = store.relations.reshape(store.relations.shape[0], 2 * store.dim)
    stacked = np.hstack(
        [
            flat_concepts[index[heads]],
            flat_relations[relations],
            flat_concepts[index[tails]],
        ]
    )
    weights = decay ** (total - 1 - np.arange(total, dtype="float64"))
    return (weights @ stacked) / total


def full_representation(
    assignments_by_channel: Mapping[str, Sequence[Assignment]],
    domain: Mapping[str, DomainKS],
    store: EmbeddingStore,
    decay: float = 0.8,
) -> np.ndarray:
    """Concatenation of per-channel representations in channel name order."""
    parts = []
    for channel in sorted(domain):
        parts.append(
            series_representation(
                assignments_by_channel.get(channel, []),
                domain[channel],
                store,
                channel,
                decay,
            )
        )
    if not parts:
        raise InvalidArgumentError("no domain structures to represent against")
    return np.concatenate(parts)


def feature_header(width: int) -> list[str]:
    return ["set_id", "observed_minutes"] + [f"f{i}" for i in range(width)] + ["label"]


def write_features_csv(
    path: str,
    rows: Sequence[tuple[str, float, np.ndarray, str]],
) -> None:
    """Rows are (set_id, observed_minutes, features, label)."""
    width = rows[0][2].size if rows else 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(feature_header(width)) + "\n")
        for set_id, minutes, features, label in rows:
            if features.size != width:
                raise InvalidArgumentError("inconsistent feature widths")
            cells = [set_id, repr(float(minutes))]
            cells.extend(repr(float(x)) for x in features)
            cells.append(label)
            fh.write(",".join(cells) + "\n")
