"""Labeled two-channel synthetic datasets with planted structure.

Each channel owns a bank of short motifs split into disjoint blocks of
consecutive motifs.  A series picks one block (the same block index in both
channels) and walks it from a low start: deteriorating sets climb toward
the block's last motif (the crisis pattern) and hold there, recovering
sets settle onto the first motif and never reach the crisis pattern, so
the classes differ in transition structure while drawing on one shared
motif bank.  Cross-channel coupling forces paired motifs to co-occur with
a configured probability.  The generator is
a pure function of its config, and `truth.json` carries everything needed
to check the pipeline against the planted ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, DataError
from .series import MeasurementSet, TimeSeries, combined_distance

TRUTH_FORMAT_VERSION = 1
SYNTH_CHANNELS = ("X1", "X2")
# start-to-start gap choices per interval relation, all multiples of the
# motif length so planted motifs stay aligned with the matching grid
GAP_CHOICES = ((15,), (30, 45), (60, 75), (90, 105, 120))
FIRST_START_CHOICES = (0, 15, 30)


def default_coupling(motifs: int) -> dict[str, float]:
    """Identity pairs with probabilities cycling through 0.5..0.8."""
    levels = (0.5, 0.6, 0.7, 0.8)
    return {f"{m}:{m}": levels[m % 4] for m in range(motifs)}


@dataclass
class SynthConfig:
    n_sets: int = 150
    total_minutes: int = 480
    channels: tuple[str, str] = SYNTH_CHANNELS
    motifs_per_channel: int = 12
    motif_length: int = 15
    block_size: int = 4
    transition_fidelity: float = 0.9
    terminal_hold: float = 0.8
    gap_bucket_weights: tuple[float, ...] = (0.55, 0.25, 0.13, 0.07)
    noise_std: float = 0.05
    coupling: dict[str, float] = field(default_factory=lambda: default_coupling(12))
    min_separation: float = 0.8
    deteriorating_rate: float = 0.4
    seed: int = 7

    def validate(self) -> None:
        if self.motif_length > self.total_minutes:
            raise ConfigurationError("motifs are too long for the series horizon")
        if len(self.channels) != 2:
            raise ConfigurationError("exactly two channels are supported")
        if not 1 <= self.block_size <= self.motifs_per_channel:
            raise ConfigurationError("block_size must fit in the motif bank")
        if not 0.0 <= self.transition_fidelity <= 1.0:
            raise ConfigurationError("transition_fidelity must lie in [0, 1]")
        if not 0.0 <= self.terminal_hold <= 1.0:
            raise ConfigurationError("terminal_hold must lie in [0, 1]")
        if not 0.0 < self.deteriorating_rate < 1.0:
            raise ConfigurationError("deteriorating_rate must lie in (0, 1)")
        if len(self.gap_bucket_weights) != len(GAP_CHOICES):
            raise ConfigurationError(
                f"gap_bucket_weights needs {len(GAP_CHOICES)} entries"
            )
        weights = np.asarray(self.gap_bucket_weights, dtype="float64")
        if np.any(weights < 0) or weights.sum() <= 0:
            raise ConfigurationError("gap_bucket_weights must be non-negative, not all zero")
        for key, value in self.coupling.items():
            a, _, b = key.partition(":")
            try:
                i, j = int(a), int(b)
            except ValueError:
                raise ConfigurationError(f"coupling key {key!r} is not 'i:j'")
            if not (0 <= i < self.motifs_per_channel and 0 <= j < self.motifs_per_channel):
                raise ConfigurationError(f"coupling key {key!r} is out of range")
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"coupling probability {value} not in [0, 1]")
        if self.n_sets < 1:
            raise ConfigurationError("n_sets must be positive")


def _smooth_walk_motif(rng: np.random.Generator, length: int) -> np.ndarray:
    steps = rng.normal(0.0, 1.0, size=length)
    walk = np.cumsum(steps)
    kernel = np.ones(3) / 3.0
    smooth = np.convolve(walk, kernel, mode="same")
    lo, hi = smooth.min(), smooth.max()
    if hi - lo < 1e-9:
        return np.full(length, 0.5)
    return (smooth - lo) / (hi - lo)


# Motifs sit in level bands keyed by block position: low bands for settled
# states, a clearly separated high band for the crisis motif at the top of
# each block.  Level gaps keep concepts from different roles apart under
# clustering even when shapes are similar.
CRISIS_LEVEL = 0.9
BASE_LEVEL_RANGE = (0.15, 0.55)
MOTIF_AMPLITUDE = 0.22


def position_levels(block_size: int) -> np.ndarray:
    """Band center per block position, crisis position well separated."""
    if block_size == 1:
        return np.asarray([0.5])
    lo, hi = BASE_LEVEL_RANGE
    centers = np.linspace(lo, hi, block_size - 1)
    return np.append(centers, CRISIS_LEVEL)


def generate_motifs(
    rng: np.random.Generator,
    count: int,
    length: int,
    min_separation: float,
    centers: Sequence[float] | None = None,
    amplitude: float = MOTIF_AMPLITUDE,
) -> np.ndarray:
    """Seeded motif bank with a minimum pairwise combined distance.

    With `centers` given, motif i oscillates around centers[i] instead of
    spanning [0, 1], so banks can plant level structure.
    """
    motifs: list[np.ndarray] = []
    attempts = 0
    while len(motifs) < count:
        attempts += 1
        if attempts > 200 * count:
            raise ConfigurationError(
                "could not generate distinct motifs; lower min_separation"
            )
        candidate = _smooth_walk_motif(rng, length)
        if centers is not None:
            center = float(centers[len(motifs)])
            candidate = np.clip(
                center + amplitude * (2.0 * candidate - 1.0), 0.0, 1.0
            )
        if all(
            combined_distance(candidate, other) >= min_separation for other in motifs
        ):
            motifs.append(candidate)
    return np.stack(motifs)


def block_transition_matrix(
    block_size: int,
    fidelity: float,
    forward: bool,
    hold: float | None = None,
) -> np.ndarray:
    """Row-stochastic matrix over block positions for one class.

    Deteriorating series climb toward the last block position (the crisis
    motif) and hold there; recovering series settle toward the first and
    never re-enter the crisis position.  `fidelity` drives drift steps;
    `hold` (default: fidelity) is the self-loop mass at the drift target's
    end, kept lower so interior motifs keep appearing.  Off-target mass is
    spread uniformly over the remaining reachable positions.
    """
    if hold is None:
        hold = fidelity
    if block_size == 1:
        return np.ones((1, 1))
    matrix = np.zeros((block_size, block_size))
    top = block_size - 1
    for p in range(block_size):
        nxt = min(p + 1, top) if forward else max(p - 1, 0)
        mass = hold if nxt == p else fidelity
        others = [
            q for q in range(block_size)
            if q != nxt and (forward or q != top)
        ]
        if others:
            matrix[p, others] = (1.0 - mass) / len(others)
            matrix[p, nxt] = mass
        else:
            matrix[p, nxt] = 1.0
    return matrix


def _sample_gap(rng: np.random.Generator, weights: np.ndarray) -> int:
    bucket = int(rng.choice(len(GAP_CHOICES), p=weights))
    choices = GAP_CHOICES[bucket]
    return int(choices[rng.integers(len(choices))])


def _sample_occurrences(
    rng: np.random.Generator,
    config: SynthConfig,
    block_start: int,
    forward: bool,
) -> list[tuple[int, int]]:
    """(motif_id, start_minute) chain for one channel of one set."""
    weights = np.asarray(config.gap_bucket_weights, dtype="float64")
    weights = weights / weights.sum()
    matrix = block_transition_matrix(
        config.block_size, config.transition_fidelity, forward, config.terminal_hold
    )
    # Both classes start at the same interior position so early windows
    # carry no class signal: deteriorating climbs toward the crisis motif,
    # recovering settles to the bottom and stays there.
    position = min(1, config.block_size - 1)
    start = int(FIRST_START_CHOICES[rng.integers(len(FIRST_START_CHOICES))])
    out = []
    while start + config.motif_length <= config.total_minutes:
        out.append((block_start + position, start))
        position = int(rng.choice(config.block_size, p=matrix[position]))
        start += _sample_gap(rng, weights)
    # Flush a final motif against the horizon so a series never trails off
    # into a long constant segment.
    last_slot = config.total_minutes - config.motif_length
    if out and out[-1][1] < last_slot:
        out.append((block_start + position, last_slot))
    return out


def _apply_coupling(
    rng: np.random.Generator,
    config: SynthConfig,
    occurrences: dict[str, list[tuple[int, int]]],
) -> None:
    """Force coupled motifs to co-occur by rewriting the nearest occurrence."""
    ch1, ch2 = config.channels
    for key in sorted(config.coupling):
        p = config.coupling[key]
        a, _, b = key.partition(":")
        i, j = int(a), int(b)
        first = {m: s for m, s in reversed(occurrences[ch1])}
        second = {m: s for m, s in reversed(occurrences[ch2])}
        if i in first and j not in second:
            if rng.random() < p and occurrences[ch2]:
                anchor = first[i]
                nearest = min(
                    range(len(occurrences[ch2])),
                    key=lambda k: (abs(occurrences[ch2][k][1] - anchor), k),
                )
                occurrences[ch2][nearest] = (j, occurrences[ch2][nearest][1])
        elif j in second and i not in first:
            if rng.random() < p and occurrences[ch1]:
                anchor = second[j]
                nearest = min(
                    range(len(occurrences[ch1])),
                    key=lambda k: (abs(occurrences[ch1][k][1] - anchor), k),
                )
                occurrences[ch1][nearest] = (i, occurrences[ch1][nearest][1])


def _synthesize_values(
    rng: np.random.Generator,
    config: SynthConfig,
    motifs: np.ndarray,
    occurrences: Sequence[tuple[int, int]],
) -> np.ndarray:
    total = config.total_minutes
    length = config.motif_length
    values = np.empty(total)
    ordered = sorted(occurrences, key=lambda ms: ms[1])
    if not ordered:
        values[:] = 0.5
    else:
        first_motif, first_start = ordered[0]
        if first_start > 0:
            # replay the opening motif across the lead-in; starts are
            # grid-aligned, so every aligned window holds a bank motif
            lead = motifs[first_motif]
            reps = int(np.ceil(first_start / length))
            values[:first_start] = np.tile(lead, reps)[:first_start]
        for idx, (motif, start) in enumerate(ordered):
            values[start : start + length] = motifs[motif]
            end = start + length
            nxt = ordered[idx + 1] if idx + 1 < len(ordered) else None
            if nxt is None:
                values[end:] = motifs[motif][-1]
            elif nxt[1] > end:
                gap = nxt[1] - end
                lo = motifs[motif][-1]
                hi = motifs[nxt[0]][0]
                # interior points of the line from the last motif sample to
                # the first sample of the next motif
                ts = np.arange(1, gap + 1) / (gap + 1)
                values[end : nxt[1]] = lo + (hi - lo) * ts
    if config.noise_std > 0:
        values = values + rng.normal(0.0, config.noise_std, size=total)
    return values


def generate(config: SynthConfig) -> tuple[list[MeasurementSet], dict]:
    """Build the dataset and its ground truth, deterministically per seed."""
    config.validate()
    ch1, ch2 = config.channels
    levels = position_levels(config.block_size)
    centers = [
        float(levels[i % config.block_size])
        for i in range(config.motifs_per_channel)
    ]
    motif_bank = {
        channel: generate_motifs(
            np.random.default_rng([config.seed, 60, idx]),
            config.motifs_per_channel,
            config.motif_length,
            config.min_separation,
            centers=centers,
        )
        for idx, channel in enumerate(config.channels)
    }
    label_rng = np.random.default_rng([config.seed, 62])
    labels = [
        "deteriorating" if label_rng.random() < config.deteriorating_rate
        else "recovering"
        for _ in range(config.n_sets)
    ]
    width = max(3, len(str(config.n_sets - 1)))
    sets: list[MeasurementSet] = []
    truth_sets: dict[str, dict] = {}
    n_blocks = config.motifs_per_channel // config.block_size
    for index in range(config.n_sets):
        rng = np.random.default_rng([config.seed, 61, index])
        set_id = f"s{index:0{width}d}"
        label = labels[index]
        forward = label == "deteriorating"
        # Disjoint aligned blocks; both channels share the block index so
        # cross-channel co-occurrence carries block identity.
        block1 = config.block_size * int(rng.integers(n_blocks))
        block2 = block1
        occurrences = {
            ch1: _sample_occurrences(rng, config, block1, forward),
            ch2: _sample_occurrences(rng, config, block2, forward),
        }
        _apply_coupling(rng, config, occurrences)
        minutes = np.arange(config.total_minutes, dtype="float64")
        series = {}
        for channel in config.channels:
            values = _synthesize_values(
                rng, config, motif_bank[channel], occurrences[channel]
            )
            series[channel] = TimeSeries(
                set_id=set_id, channel=channel, minutes=minutes, values=values
            )
        sets.append(MeasurementSet(set_id=set_id, series=series, label=label))
        truth_sets[set_id] = {
            "label": label,
            "blocks": {ch1: block1, ch2: block2},
            "occurrences": [
                {"channel": channel, "motif": int(m), "start": int(s)}
                for channel in config.channels
                for m, s in sorted(occurrences[channel], key=lambda ms: ms[1])
            ],
        }
    truth = {
        "format_version": TRUTH_FORMAT_VERSION,
        "noise_std": config.noise_std,
        "motifs": {
            channel: [[float(x) for x in row] for row in motif_bank[channel]]
            for channel in config.channels
        },
        "coupling": dict(sorted(config.coupling.items())),
        "transition_pattern": {
            "deteriorating": [
                [float(x) for x in row]
                for row in block_transition_matrix(
                    config.block_size,
                    config.transition_fidelity,
                    forward=True,
                    hold=config.terminal_hold,
                )
            ],
            "recovering": [
                [float(x) for x in row]
                for row in block_transition_matrix(
                    config.block_size,
                    config.transition_fidelity,
                    forward=False,
                    hold=config.terminal_hold,
                )
            ],
        },
        "sets": truth_sets,
    }
    return sets, truth


def nearest_shapelets(
    motifs: Sequence[np.ndarray], dictionary
) -> list[tuple[int, float]]:
    """(best shapelet id, combined distance) per planted motif."""
    out = []
    for motif in motifs:
        best_id, best_d = -1, np.inf
        for shapelet in dictionary.shapelets:
            d = combined_distance(np.asarray(motif), shapelet.values)
            if d < best_d:
                best_id, best_d = shapelet.shapelet_id, d
        out.append((best_id, float(best_d)))
    return out


def oracle_checks(
    sets: Sequence[MeasurementSet],
    truth: Mapping,
    model,
    recovery_slack: float = 0.05,
) -> dict:
    """Compare pipeline outputs with the planted ground truth.

    Reports, per channel: the fraction of planted motifs recovered by a
    discovered shapelet within a noise-scaled distance bound, the planted
    motif -> concept map, whether concepts matched by crisis-position
    motifs stay disjoint from those matched by settled motifs, and for
    each coupled pair the correlation bin its mapped concepts landed in.
    """
    noise = float(truth.get("noise_std", 0.0))
    pattern = truth.get("transition_pattern", {}).get("deteriorating", [])
    block_size = len(pattern)
    report: dict = {"channels": {}, "coupling_bins": {}}
    concept_map: dict[str, dict[int, int]] = {}
    for channel, rows in truth["motifs"].items():
        dictionary = model.dictionaries.get(channel)
        if dictionary is None:
            raise DataError(f"model has no dictionary for channel {channel!r}")
        motifs = [np.asarray(row) for row in rows]
        matches = nearest_shapelets(motifs, dictionary)
        bound = recovery_slack + 2.0 * noise * np.sqrt(len(motifs[0]))
        recovered = sum(1 for _, d in matches if d <= bound)
        concept_map[channel] = {m: sid for m, (sid, _) in enumerate(matches)}
        triplets = model.domain[channel].triplets if channel in model.domain else {}
        top_count = max(triplets.values(), default=0)
        entry = {
            "motif_recovery": recovered / len(matches),
            "nearest": matches,
            "concept_map": concept_map[channel],
            "max_triplet_count": top_count,
        }
        if block_size > 1:
            crisis = {
                sid for m, (sid, _) in enumerate(matches)
                if m % block_size == block_size - 1
            }
            settled = {
                sid for m, (sid, _) in enumerate(matches)
                if m % block_size != block_size - 1
            }
            entry["crisis_concepts"] = sorted(crisis)
            entry["crisis_pure"] = not (crisis & settled)
        report["channels"][channel] = entry
    n_corr = len(model.cross.correlations)
    for key, probability in truth.get("coupling", {}).items():
        a, _, b = key.partition(":")
        i, j = int(a), int(b)
        ch1, ch2 = sorted(truth["motifs"])
        pair = (
            (ch1, concept_map[ch1][i]),
            (ch2, concept_map[ch2][j]),
        )
        triplet = model.cross.lookup(*pair)
        report["coupling_bins"][key] = {
            "probability": probability,
            "bin": None if triplet is None else triplet.correlation_id,
            "top_bin": None if triplet is None else triplet.correlation_id == n_corr - 1,
        }
    return report
