"""Knowledge structures built from concept assignments.

Two kinds of structure are built per dataset: a per-channel domain structure
whose triplets relate concepts through binned time gaps, and one cross-channel
structure whose triplets carry binned co-occurrence likelihoods.  Transition
statistics over immediate successors feed the guided exploration later on.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import ArtifactError, InvalidArgumentError
from .series import Assignment

STRUCTURES_FORMAT_VERSION = 1

ConceptRef = tuple[str, int]


@dataclass(frozen=True)
class GapRelations:
    """Time-gap buckets; bounds are the right-open upper edges, last bucket open."""

    bounds: tuple[float, ...] = (30.0, 60.0, 90.0)

    def __post_init__(self) -> None:
        if not self.bounds or any(b <= 0 for b in self.bounds):
            raise InvalidArgumentError("relation bounds must be positive")
        if list(self.bounds) != sorted(set(self.bounds)):
            raise InvalidArgumentError("relation bounds must be strictly increasing")

    @property
    def count(self) -> int:
        return len(self.bounds) + 1

    def bucket(self, gap: float) -> int:
        if gap < 0:
            raise InvalidArgumentError(f"gap must be non-negative, got {gap}")
        for i, b in enumerate(self.bounds):
            if gap < b:
                return i
        return len(self.bounds)

    def to_json(self) -> list[dict]:
        out = []
        lo = 0.0
        for i, b in enumerate(self.bounds):
            out.append({"id": i, "lo": lo, "hi": b})
            lo = b
        out.append({"id": len(self.bounds), "lo": lo, "hi": None})
        return out


@dataclass
class DomainKS:
    """Directed triplet store (head concept, gap relation, tail concept) with counts."""

    channel: str
    relations: GapRelations
    triplets: dict[tuple[int, int, int], int] = field(default_factory=dict)

    def concepts(self) -> list[int]:
        seen = set()
        for head, _, tail in self.triplets:
            seen.add(head)
            seen.add(tail)
        return sorted(seen)

    def adjacency(self) -> dict[int, set[int]]:
        """Undirected neighbor sets over triplet edges."""
        adj: dict[int, set[int]] = {}
        for head, _, tail in self.triplets:
            adj.setdefault(head, set()).add(tail)
            adj.setdefault(tail, set()).add(head)
        return adj

    def edge_relation(self) -> dict[tuple[int, int], int]:
        """Dominant relation per directed edge: highest count, lowest id on ties."""
        best: dict[tuple[int, int], tuple[int, int]] = {}
        for (head, rel, tail), count in sorted(self.triplets.items()):
            key = (head, tail)
            cur = best.get(key)
            if cur is None or count > cur[0]:
                best[key] = (count, rel)
        return {key: rel for key, (_, rel) in best.items()}


@dataclass
class TransitionStats:
    """Immediate-successor counts per channel, row-normalized on demand."""

    channel: str
    counts: dict[tuple[int, int], int] = field(default_factory=dict)

    def successors(self, head: int) -> list[int]:
        return sorted(t for (h, t) in self.counts if h == head)

    def row(self, head: int) -> dict[int, float]:
        row = {t: c for (h, t), c in self.counts.items() if h == head}
        total = sum(row.values())
        if total == 0:
            return {}
        return {t: c / total for t, c in sorted(row.items())}

    def heads(self) -> list[int]:
        return sorted({h for (h, _) in self.counts})


def build_domain_ks(
    assignment_lists: Iterable[list[Assignment]],
    channel: str,
    relations: GapRelations | None = None,
) -> DomainKS:
    """Count every ordered assignment pair of each series as one triplet.

    For assignments a_i, a_j of one series with start_minute(a_i) <
    start_minute(a_j), the pair contributes the triplet (concept_i,
    bucket(gap), concept_j) where gap is the start-minute difference.
    """
    relations = relations or GapRelations()
    ks = DomainKS(channel=channel, relations=relations)
    for assignments in assignment_lists:
        ordered = sorted(assignments, key=lambda a: (a.start_minute, a.concept_id))
        n = len(ordered)
        for i in range(n):
            for j in range(i + 1, n):
                a, b = ordered[i], ordered[j]
                if b.start_minute <= a.start_minute:
                    continue
                rel = relations.bucket(b.start_minute - a.start_minute)
                key = (a.concept_id, rel, b.concept_id)
                ks.triplets[key] = ks.triplets.get(key, 0) + 1
    return ks


def transition_probabilities(
    assignment_lists: Iterable[list[Assignment]], channel: str
) -> TransitionStats:
    """Count immediate successors in each series' time-ordered assignment list.

    Assignments sharing a start minute are co-located: they are ordered by
    concept id but never count as successors of each other; the successor of
    an assignment is the first later-minute entry of the list.
    """
    stats = TransitionStats(channel=channel)
    for assignments in assignment_lists:
        ordered = sorted(assignments, key=lambda a: (a.start_minute, a.concept_id))
        n = len(ordered)
        for i, a in enumerate(ordered):
            succ = None
            for j in range(i + 1, n):
                if ordered[j].start_minute > a.start_minute:
                    succ = ordered[j]
                    break
            if succ is not None:
                key = (a.concept_id, succ.concept_id)
                stats.counts[key] = stats.counts.get(key, 0) + 1
    return stats


def concept_sets(
    assignments_by_set: Mapping[str, Mapping[str, list[Assignment]]],
) -> dict[str, dict[str, set[int]]]:
    """Concepts assigned per measurement set and channel."""
    return {
        set_id: {
            channel: {a.concept_id for a in assignments}
            for channel, assignments in per_channel.items()
        }
        for set_id, per_channel in assignments_by_set.items()
    }


def cooccurrence_likelihood(
    sets: Mapping[str, Mapping[str, set[int]]],
    channels: tuple[str, str] = ("X1", "X2"),
) -> dict[tuple[ConceptRef, ConceptRef], float]:
    """Jaccard likelihood of concept pairs across the two channels.

    likelihood(c, c') = |sets with both| / |sets with either|; pairs that
    never occur jointly are omitted.
    """
    ch1, ch2 = channels
    members: dict[ConceptRef, set[str]] = {}
    for set_id, per_channel in sets.items():
        for channel in channels:
            for concept in per_channel.get(channel, ()):  # type: ignore[union-attr]
                members.setdefault((channel, concept), set()).add(set_id)
    out: dict[tuple[ConceptRef, ConceptRef], float] = {}
    lefts = sorted(k for k in members if k[0] == ch1)
    rights = sorted(k for k in members if k[0] == ch2)
    for a in lefts:
        for b in rights:
            both = members[a] & members[b]
            if not both:
                continue
            either = members[a] | members[b]
            out[(a, b)] = len(both) / len(either)
    return out


@dataclass(frozen=True)
class Correlation:
    """One likelihood bin; bins partition (0, max likelihood] equally."""

    correlation_id: int
    lo: float
    hi: float


@dataclass(frozen=True)
class CrossTriplet:
    head: ConceptRef
    tail: ConceptRef
    correlation_id: int
    likelihood: float


@dataclass
class CrossKS:
    """Cross-channel triplet store; pairs are stored once, queried symmetrically."""

    correlations: list[Correlation] = field(default_factory=list)
    triplets: dict[tuple[ConceptRef, ConceptRef], CrossTriplet] = field(
        default_factory=dict
    )

    def lookup(self, a: ConceptRef, b: ConceptRef) -> CrossTriplet | None:
        key = (a, b) if a <= b else (b, a)
        return self.triplets.get(key)

    def concepts(self) -> list[ConceptRef]:
        seen: set[ConceptRef] = set()
        for t in self.triplets.values():
            seen.add(t.head)
            seen.add(t.tail)
        return sorted(seen)

    def concepts_by_channel(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for channel, concept in self.concepts():
            out.setdefault(channel, []).append(concept)
        return {ch: sorted(ids) for ch, ids in out.items()}

    def adjacency(self) -> dict[ConceptRef, list[ConceptRef]]:
        adj: dict[ConceptRef, set[ConceptRef]] = {}
        for t in self.triplets.values():
            adj.setdefault(t.head, set()).add(t.tail)
            adj.setdefault(t.tail, set()).add(t.head)
        return {k: sorted(v) for k, v in sorted(adj.items())}


def likelihood_bin(likelihood: float, max_likelihood: float, bins: int) -> int:
    """Equal-width bin index in [0, bins) over (0, max], top bin right-closed."""
    if likelihood <= 0 or likelihood > max_likelihood:
        raise InvalidArgumentError("likelihood must lie in (0, max_likelihood]")
    width = max_likelihood / bins
    idx = int(math.ceil(likelihood / width - 1e-12)) - 1
    return min(max(idx, 0), bins - 1)


def build_cross_ks(
    likelihoods: Mapping[tuple[ConceptRef, ConceptRef], float],
    bins: int = 5,
) -> CrossKS:
    """Bin co-occurrence likelihoods into equal-width correlation types."""
    if bins < 1:
        raise InvalidArgumentError("bins must be positive")
    ks = CrossKS()
    if not likelihoods:
        return ks
    max_l = max(likelihoods.values())
    width = max_l / bins
    ks.correlations = [
        Correlation(i, lo=i * width, hi=(i + 1) * width) for i in range(bins)
    ]
    for (a, b), value in sorted(likelihoods.items()):
        key = (a, b) if a <= b else (b, a)
        idx = likelihood_bin(value, max_l, bins)
        ks.triplets[key] = CrossTriplet(
            head=key[0], tail=key[1], correlation_id=idx, likelihood=float(value)
        )
    return ks


def _concept_str(ref: ConceptRef) -> str:
    return f"{ref[0]}:{ref[1]}"


def _parse_concept(text: str) -> ConceptRef:
    channel, _, concept = text.rpartition(":")
    if not channel:
        raise ArtifactError(f"malformed concept reference: {text!r}")
    return (channel, int(concept))


def structures_to_json(
    domain: Mapping[str, DomainKS], cross: CrossKS
) -> dict:
    return {
        "format_version": STRUCTURES_FORMAT_VERSION,
        "domain_ks": [
            {
                "channel": channel,
                "relations": ks.relations.to_json(),
                "triplets": [
                    {"head": h, "rel": r, "tail": t, "count": c}
                    for (h, r, t), c in sorted(ks.triplets.items())
                ],
            }
            for channel, ks in sorted(domain.items())
        ],
        "cross_ks": {
            "correlations": [
                {"id": c.correlation_id, "lo": c.lo, "hi": c.hi}
                for c in cross.correlations
            ],
            "triplets": [
                {
                    "head": _concept_str(t.head),
                    "corr": t.correlation_id,
                    "tail": _concept_str(t.tail),
                    "likelihood": t.likelihood,
                }
                for _, t in sorted(cross.triplets.items())
            ],
        },
    }


def structures_from_json(data: dict) -> tuple[dict[str, DomainKS], CrossKS]:
    if not isinstance(data, dict):
        raise ArtifactError("structures artifact must be a JSON object")
    if data.get("format_version") != STRUCTURES_FORMAT_VERSION:
        raise ArtifactError(
            f"unsupported structures format_version: {data.get('format_version')!r}"
        )
    try:
        domain: dict[str, DomainKS] = {}
        for entry in data["domain_ks"]:
            rels = entry["relations"]
            bounds = tuple(r["hi"] for r in rels[:-1])
            ks = DomainKS(channel=entry["channel"], relations=GapRelations(bounds))
            for t in entry["triplets"]:
                ks.triplets[(int(t["head"]), int(t["rel"]), int(t["tail"]))] = int(
                    t["count"]
                )
            domain[entry["channel"]] = ks
        cross = CrossKS()
        cdata = data["cross_ks"]
        cross.correlations = [
            Correlation(int(c["id"]), float(c["lo"]), float(c["hi"]))
            for c in cdata["correlations"]
        ]
        for t in cdata["triplets"]:
            head = _parse_concept(t["head"])
            tail = _parse_concept(t["tail"])
            key = (head, tail) if head <= tail else (tail, head)
            cross.triplets[key] = CrossTriplet(
                head=key[0],
                tail=key[1],
                correlation_id=int(t["corr"]),
                likelihood=float(t["likelihood"]),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"malformed structures artifact: {exc}")
    return domain, cross


def save_structures(domain: Mapping[str, DomainKS], cross: CrossKS, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(structures_to_json(domain, cross), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_structures(path: str) -> tuple[dict[str, DomainKS], CrossKS]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ArtifactError(f"structures file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"structures file {path} is not valid JSON: {exc}")
    return structures_from_json(data)
