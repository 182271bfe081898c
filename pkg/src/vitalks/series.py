"""Time-series primitives: distances, shapelet discovery, concept assignment.

A measurement set holds one series per channel on a minute grid.  Each series
is segmented into non-overlapping windows of the shapelet length; windows are
compared against a per-channel shapelet dictionary with a combined
Euclidean/DTW distance, and sufficiently close dictionary entries become
concept assignments with a similarity score in [0, 1].
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ArtifactError, ConfigurationError, DataError, InvalidArgumentError

VALID_LABELS = ("deteriorating", "recovering")

DICTIONARY_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TimeSeries:
    """One channel of one measurement set, sampled on a minute grid."""

    set_id: str
    channel: str
    minutes: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        minutes = np.asarray(self.minutes, dtype="float64")
        values = np.asarray(self.values, dtype="float64")
        if minutes.ndim != 1 or values.ndim != 1 or minutes.size != values.size:
            raise InvalidArgumentError("minutes and values must be equal-length 1-D")
        if minutes.size and np.any(np.diff(minutes) <= 0):
            raise DataError(f"minutes not strictly increasing for {self.set_id}/{self.channel}")
        if values.size and not np.all(np.isfinite(values)):
            raise DataError(f"non-finite value in series {self.set_id}/{self.channel}")
        object.__setattr__(self, "minutes", minutes)
        object.__setattr__(self, "values", values)


@dataclass
class MeasurementSet:
    """All channels of one monitored subject."""

    set_id: str
    series: dict[str, TimeSeries] = field(default_factory=dict)
    label: str | None = None


@dataclass(frozen=True)
class Shapelet:
    shapelet_id: int
    values: np.ndarray


@dataclass
class ShapeletDictionary:
    """Ordered shapelets for one channel; ids are 0..len-1."""

    channel: str
    shapelets: list[Shapelet]

    def __post_init__(self) -> None:
        if not self.shapelets:
            raise InvalidArgumentError("dictionary must hold at least one shapelet")
        lengths = {len(s.values) for s in self.shapelets}
        if len(lengths) != 1:
            raise InvalidArgumentError("all shapelets must share one length")
        for i, s in enumerate(self.shapelets):
            if s.shapelet_id != i:
                raise InvalidArgumentError("shapelet ids must be consecutive from 0")

    @property
    def length(self) -> int:
        return len(self.shapelets[0].values)

    def matrix(self) -> np.ndarray:
        return np.stack([s.values for s in self.shapelets])


@dataclass(frozen=True)
class Assignment:
    """One concept matched onto one window of a series."""

    concept_id: int
    subsequence_index: int
    start_minute: float
    score: float


def _check_sequence(x: Sequence[float] | np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype="float64")
    if arr.ndim != 1:
        raise InvalidArgumentError(f"{name} must be 1-D")
    if arr.size == 0:
        raise InvalidArgumentError(f"{name} must be non-empty")
    return arr


def dtw_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Dynamic time warping distance with absolute-difference local cost.

    The full warping window is used and no path normalization is applied.
    """
    x = _check_sequence(a, "a")
    y = _check_sequence(b, "b")
    n, m = x.size, y.size
    cost = np.abs(x[:, None] - y[None, :])
    acc = np.empty((n, m), dtype="float64")
    acc[0, 0] = cost[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
        row = acc[i]
        prev = acc[i - 1]
        for j in range(1, m):
            row[j] = cost[i, j] + min(prev[j], prev[j - 1], row[j - 1])
    return float(acc[n - 1, m - 1])


def _dtw_pairs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """DTW distance for P aligned pairs of equal-length rows, vectorized."""
    p, n = a.shape
    _, m = b.shape
    prev = np.empty((m, p), dtype="float64")
    cur = np.empty((m, p), dtype="float64")
    for i in range(n):
        ai = a[:, i]
        for j in range(m):
            c = np.abs(ai - b[:, j])
            if i == 0 and j == 0:
                cur[0] = c
            elif i == 0:
                cur[j] = cur[j - 1] + c
            elif j == 0:
                cur[0] = prev[0] + c
            else:
                cur[j] = c + np.minimum(prev[j], np.minimum(prev[j - 1], cur[j - 1]))
        prev, cur = cur, prev
    return prev[m - 1].copy()


def euclidean_distance(a: Sequence[float], b: Sequence[float]) -> float:
    x = _check_sequence(a, "a")
    y = _check_sequence(b, "b")
    if x.size != y.size:
        raise InvalidArgumentError("sequences must have equal length")
    return float(np.sqrt(np.sum((x - y) ** 2)))


def combined_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Mean of the Euclidean and DTW distances of two equal-length sequences."""
    x = _check_sequence(a, "a")
    y = _check_sequence(b, "b")
    if x.size != y.size:
        raise InvalidArgumentError("sequences must have equal length")
    return 0.5 * (euclidean_distance(x, y) + dtw_distance(x, y))


def subsequences(values: np.ndarray, length: int) -> np.ndarray:
    """Non-overlapping windows of ``length``; a trailing remainder is dropped."""
    if length <= 0:
        raise InvalidArgumentError("length must be positive")
    values = np.asarray(values, dtype="float64")
    n = values.size // length
    return values[: n * length].reshape(n, length)


def distance_matrix(windows: np.ndarray, dictionary: ShapeletDictionary) -> np.ndarray:
    """Combined distance of every (shapelet, window) pair, shape (K, n)."""
    windows = np.asarray(windows, dtype="float64")
    if windows.ndim != 2:
        raise InvalidArgumentError("windows must be a 2-D array")
    k = len(dictionary.shapelets)
    n = windows.shape[0]
    if n == 0:
        return np.empty((k, 0), dtype="float64")
    if windows.shape[1] != dictionary.length:
        raise InvalidArgumentError("window length does not match the dictionary")
    cmat = dictionary.matrix()
    a = np.repeat(cmat, n, axis=0)
    b = np.tile(windows, (k, 1))
    euclid = np.sqrt(np.sum((a - b) ** 2, axis=1))
    dtw = _dtw_pairs(a, b)
    return (0.5 * (euclid + dtw)).reshape(k, n)


def scores_from_distances(distances: np.ndarray) -> np.ndarray:
    """Similarity scores in [0, 1] from a per-series distance matrix.

    Scores are normalized over all (shapelet, window) pairs of the series;
    when every distance is identical all scores are 1.
    """
    distances = np.asarray(distances, dtype="float64")
    if distances.size == 0:
        return np.ones_like(distances)
    hi = distances.max()
    lo = distances.min()
    if hi == lo:
        return np.ones_like(distances)
    return (hi - distances) / (hi - lo)


def matching_scores(series: TimeSeries, dictionary: ShapeletDictionary) -> np.ndarray:
    """Score matrix (shapelet x window) for one series against a dictionary."""
    windows = subsequences(series.values, dictionary.length)
    return scores_from_distances(distance_matrix(windows, dictionary))


def assignments_from_distances(
    distances: np.ndarray,
    window_length: int,
    threshold: float = 0.7,
    top_k: int = 3,
) -> list[Assignment]:
    """Assignments from a distance matrix, sorted by start minute then concept."""
    k, n = distances.shape
    scores = scores_from_distances(distances)
    out: list[Assignment] = []
    order_keys = np.arange(k)
    for j in range(n):
        col = distances[:, j]
        nearest = np.lexsort((order_keys, col))[:top_k]
        for c in sorted(int(c) for c in nearest if scores[c, j] >= threshold):
            out.append(
                Assignment(
                    concept_id=c,
                    subsequence_index=j,
                    start_minute=float(j * window_length),
                    score=float(scores[c, j]),
                )
            )
    return out


def assign_concepts(
    series: TimeSeries,
    dictionary: ShapeletDictionary,
    threshold: float = 0.7,
    top_k: int = 3,
) -> list[Assignment]:
    """Assign dictionary concepts to the windows of one series.

    A concept is kept when its score reaches ``threshold`` and it is among the
    ``top_k`` nearest concepts of the window by combined distance.
    """
    windows = subsequences(series.values, dictionary.length)
    distances = distance_matrix(windows, dictionary)
    return assignments_from_distances(distances, dictionary.length, threshold, top_k)


def _kmeans_pp_init(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = data.shape[0]
    centroids = np.empty((k, data.shape[1]), dtype="float64")
    first = int(rng.integers(n))
    centroids[0] = data[first]
    d2 = np.sum((data - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with a chosen centroid
            centroids[i] = data[int(rng.integers(n))]
            continue
        probs = d2 / total
        choice = int(rng.choice(n, p=probs))
        centroids[i] = data[choice]
        d2 = np.minimum(d2, np.sum((data - centroids[i]) ** 2, axis=1))
    return centroids


def _lloyd(data: np.ndarray, centroids: np.ndarray, iterations: int) -> np.ndarray:
    k = centroids.shape[0]
    for _ in range(iterations):
        d2 = (
            np.sum(data**2, axis=1)[:, None]
            - 2.0 * data @ centroids.T
            + np.sum(centroids**2, axis=1)[None, :]
        )
        labels = np.argmin(d2, axis=1)
        new = centroids.copy()
        for c in range(k):
            mask = labels == c
            if np.any(mask):
                new[c] = data[mask].mean(axis=0)
            else:
                # move an empty centroid onto the point farthest from its own
                worst = int(np.argmax(d2[np.arange(len(labels)), labels]))
                new[c] = data[worst]
        if np.array_equal(new, centroids):
            break
        centroids = new
    return centroids


def discover_shapelets(
    dataset: Iterable[TimeSeries],
    count: int,
    length: int,
    seed: int,
    max_candidates: int = 50000,
    iterations: int = 50,
) -> ShapeletDictionary:
    """Build a shapelet dictionary for one channel by clustering windows.

    Every non-overlapping window of every series forms the candidate pool
    (subsampled to ``max_candidates`` when larger); k-means centroids become
    the dictionary entries.  Deterministic for a fixed (dataset, count,
    length, seed).
    """
    series_list = list(dataset)
    if not series_list:
        raise InvalidArgumentError("dataset must contain at least one series")
    channels = {s.channel for s in series_list}
    if len(channels) != 1:
        raise InvalidArgumentError("discovery runs on a single channel at a time")
    if count < 1:
        raise ConfigurationError("shapelet count must be positive")
    pools = [subsequences(s.values, length) for s in series_list]
    pools = [p for p in pools if p.shape[0] > 0]
    if not pools:
        raise InvalidArgumentError("no series is long enough for the window length")
    data = np.concatenate(pools, axis=0)
    rng = np.random.default_rng(seed)
    if data.shape[0] > max_candidates:
        idx = rng.choice(data.shape[0], size=max_candidates, replace=False)
        data = data[np.sort(idx)]
    distinct = np.unique(data, axis=0)
    if count > distinct.shape[0]:
        raise ConfigurationError(
            f"requested {count} shapelets but only {distinct.shape[0]} distinct windows exist"
        )
    centroids = _kmeans_pp_init(data, count, rng)
    centroids = _lloyd(data, centroids, iterations)
    shapelets = [Shapelet(i, centroids[i].copy()) for i in range(count)]
    return ShapeletDictionary(channel=channels.pop(), shapelets=shapelets)


def load_series_csv(path: str) -> list[MeasurementSet]:
    """Read a long-format series CSV with columns set_id,channel,minute,value."""
    grouped: dict[str, dict[str, list[tuple[float, float]]]] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["set_id", "channel", "minute", "value"]:
            raise DataError(f"unexpected series header in {path}: {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 columns")
            set_id, channel, minute_s, value_s = row
            try:
                minute = float(minute_s)
                value = float(value_s)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric minute or value")
            if not np.isfinite(value) or not np.isfinite(minute):
                raise DataError(f"{path}:{lineno}: non-finite minute or value")
            if set_id not in grouped:
                grouped[set_id] = {}
                order.append(set_id)
            grouped[set_id].setdefault(channel, []).append((minute, value))
    sets: list[MeasurementSet] = []
    for set_id in order:
        series = {}
        for channel, rows in grouped[set_id].items():
            minutes = np.array([r[0] for r in rows])
            values = np.array([r[1] for r in rows])
            if np.any(np.diff(minutes) <= 0):
                raise DataError(f"minutes not sorted for {set_id}/{channel} in {path}")
            series[channel] = TimeSeries(set_id, channel, minutes, values)
        sets.append(MeasurementSet(set_id=set_id, series=series))
    return sets


def write_series_csv(sets: Iterable[MeasurementSet], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["set_id", "channel", "minute", "value"])
        for mset in sets:
            for channel in sorted(mset.series):
                ts = mset.series[channel]
                for minute, value in zip(ts.minutes, ts.values):
                    writer.writerow([mset.set_id, channel, _fmt(minute), repr(float(value))])


def _fmt(minute: float) -> str:
    if float(minute).is_integer():
        return str(int(minute))
    return repr(float(minute))


def load_labels_csv(path: str) -> dict[str, str]:
    """Read a label CSV with columns set_id,label."""
    labels: dict[str, str] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["set_id", "label"]:
            raise DataError(f"unexpected label header in {path}: {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 columns")
            set_id, label = row
            if label not in VALID_LABELS:
                raise DataError(f"{path}:{lineno}: unknown label {label!r}")
            labels[set_id] = label
    return labels


def write_labels_csv(labels: dict[str, str], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["set_id", "label"])
        for set_id in labels:
            writer.writerow([set_id, labels[set_id]])


def dictionary_to_json(dictionary: ShapeletDictionary) -> dict:
    return {
        "format_version": DICTIONARY_FORMAT_VERSION,
        "channel": dictionary.channel,
        "shapelets": [
            {"id": s.shapelet_id, "values": [float(v) for v in s.values]}
            for s in dictionary.shapelets
        ],
    }


def dictionary_from_json(data: dict) -> ShapeletDictionary:
    if not isinstance(data, dict):
        raise ArtifactError("dictionary artifact must be a JSON object")
    if data.get("format_version") != DICTIONARY_FORMAT_VERSION:
        raise ArtifactError(
            f"unsupported dictionary format_version: {data.get('format_version')!r}"
        )
    try:
        channel = data["channel"]
        shapelets = [
            Shapelet(int(e["id"]), np.asarray(e["values"], dtype="float64"))
            for e in data["shapelets"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"malformed dictionary artifact: {exc}")
    shapelets.sort(key=lambda s: s.shapelet_id)
    try:
        return ShapeletDictionary(channel=channel, shapelets=shapelets)
    except InvalidArgumentError as exc:
        raise ArtifactError(f"invalid dictionary artifact: {exc}")


def save_dictionary(dictionary: ShapeletDictionary, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dictionary_to_json(dictionary), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dictionary(path: str) -> ShapeletDictionary:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ArtifactError(f"dictionary file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"dictionary file {path} is not valid JSON: {exc}")
    return dictionary_from_json(data)
