"""Command-line front-end over the pipeline stages.

Every subcommand reads and writes explicit artifact paths, validates the
format version of anything it loads, and is byte-identical across runs with
the same inputs and seed.  Exit codes: 0 success, 2 missing or incompatible
artifacts, 3 validation failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .classifiers import classifier_from_json, fit_builtin_classifier
from .config import PipelineConfig, desk_config, load_config
from .context import (
    enumerate_correlation_paths,
    paths_to_json,
    sample_walks,
    walks_to_json,
)
from .detection import evaluate, monitor_series
from .errors import (
    ArtifactError,
    ConfigurationError,
    DataError,
    VitalksError,
)
from .pipeline import PipelineModel, build_structures, match_dataset
from .representation import write_features_csv
from .series import (
    discover_shapelets,
    load_dictionary,
    load_labels_csv,
    load_series_csv,
    save_dictionary,
    write_labels_csv,
    write_series_csv,
)
from .strength import compute_strengths
from .structures import load_structures, save_structures, transition_probabilities
from .synth import generate
from .training import load_model, save_model, train

log = logging.getLogger(__name__)

CLASSIFIER_FORMAT_VERSION = 1


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ArtifactError(f"file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path} is not valid JSON: {exc}")


def _parse_dictionary_args(pairs: list[str]) -> dict[str, str]:
    out = {}
    for item in pairs or []:
        channel, sep, path = item.partition("=")
        if not sep or not channel or not path:
            raise ConfigurationError(
                f"--dictionary expects CHANNEL=PATH, got {item!r}"
            )
        out[channel] = path
    if not out:
        raise ConfigurationError("at least one --dictionary CHANNEL=PATH is required")
    return out


def _load_dictionaries(pairs: list[str], config: PipelineConfig) -> dict:
    dictionaries = {
        channel: load_dictionary(path)
        for channel, path in _parse_dictionary_args(pairs).items()
    }
    for channel, dictionary in dictionaries.items():
        if dictionary.channel != channel:
            raise ArtifactError(
                f"dictionary at channel {channel!r} was built for "
                f"{dictionary.channel!r}"
            )
        if dictionary.length != config.structure.shapelet_length:
            raise ArtifactError(
                f"dictionary length {dictionary.length} does not match configured "
                f"shapelet_length {config.structure.shapelet_length}"
            )
    return dictionaries


def _attach_labels(sets, labels_path: str | None) -> None:
    if labels_path is None:
        return
    labels = load_labels_csv(labels_path)
    for mset in sets:
        if mset.set_id in labels:
            mset.label = labels[mset.set_id]


def _assemble_model(args, config: PipelineConfig) -> PipelineModel:
    dictionaries = _load_dictionaries(args.dictionary, config)
    domain, cross = load_structures(args.ks)
    store, mf, train_config = load_model(args.model)
    config.train = train_config
    for channel, dictionary in dictionaries.items():
        for i in range(len(dictionary.shapelets)):
            if (channel, i) not in store.concept_index:
                raise ArtifactError(
                    f"model is missing concept {channel}:{i}; dictionary and "
                    "model artifacts disagree"
                )
    strengths = None
    if mf is not None and cross.triplets:
        pair_correlation = {
            pair: triplet.correlation_id for pair, triplet in cross.triplets.items()
        }
        strengths = compute_strengths(
            mf,
            pair_correlation,
            len(cross.correlations),
            config.train.strength_softmax_scope,
        )
    return PipelineModel(
        dictionaries=dictionaries,
        domain=domain,
        transitions={},
        cross=cross,
        store=store,
        mf=mf,
        strengths=strengths,
        config=config,
    )


def cmd_synth(args, config: PipelineConfig) -> int:
    if args.sets is not None:
        config.synth.n_sets = args.sets
    if args.noise is not None:
        config.synth.noise_std = args.noise
    config.synth.validate()
    sets, truth = generate(config.synth)
    os.makedirs(args.out, exist_ok=True)
    write_series_csv(sets, os.path.join(args.out, "series.csv"))
    write_labels_csv(
        {s.set_id: s.label for s in sets}, os.path.join(args.out, "labels.csv")
    )
    _write_json(os.path.join(args.out, "truth.json"), truth)
    return 0


def cmd_shapelets(args, config: PipelineConfig) -> int:
    sets = load_series_csv(args.series)
    channels = sorted({ch for mset in sets for ch in mset.series})
    if args.channel not in channels:
        raise DataError(f"channel {args.channel!r} not present in {args.series}")
    count = args.count or config.structure.shapelet_counts.get(args.channel)
    if count is None:
        raise ConfigurationError(
            f"no shapelet count configured for channel {args.channel!r}"
        )
    # the same per-channel seed stream the full pipeline uses
    seed = int(
        np.random.default_rng(
            [config.seed, 21, channels.index(args.channel)]
        ).integers(2**31)
    )
    dataset = [m.series[args.channel] for m in sets if args.channel in m.series]
    dictionary = discover_shapelets(
        dataset,
        count=count,
        length=config.structure.shapelet_length,
        seed=seed,
        max_candidates=config.structure.max_candidates,
        iterations=config.structure.kmeans_iterations,
    )
    save_dictionary(dictionary, args.out)
    return 0


def cmd_build_ks(args, config: PipelineConfig) -> int:
    sets = load_series_csv(args.series)
    dictionaries = _load_dictionaries(args.dictionary, config)
    assignments = match_dataset(sets, dictionaries, config.structure)
    domain, _, cross = build_structures(assignments, config.structure)
    save_structures(domain, cross, args.out)
    return 0


def cmd_train(args, config: PipelineConfig) -> int:
    sets = load_series_csv(args.series)
    dictionaries = _load_dictionaries(args.dictionary, config)
    assignments = match_dataset(sets, dictionaries, config.structure)
    domain, transitions, cross = build_structures(assignments, config.structure)
    counts = {ch: len(d.shapelets) for ch, d in dictionaries.items()}
    result = train(domain, transitions, cross, counts, config.train)
    if result.diverged:
        log.warning("training stopped early after a non-finite loss")
    save_model(result.store, result.mf, config.train, args.out, binary=args.binary)
    return 0


def cmd_represent(args, config: PipelineConfig) -> int:
    sets = load_series_csv(args.series)
    _attach_labels(sets, args.labels)
    model = _assemble_model(args, config)
    from .pipeline import featurize

    rows = featurize(model, sets, prefix=args.prefix)
    write_features_csv(args.out, rows)
    return 0


def cmd_fit(args, config: PipelineConfig) -> int:
    features, labels = _load_features_csv(args.features)
    classifier = fit_builtin_classifier(
        features, labels, kind=args.kind or config.detection.classifier,
        seed=config.seed,
    )
    _write_json(
        args.out,
        {"format_version": CLASSIFIER_FORMAT_VERSION, "classifier": classifier.to_json()},
    )
    return 0


def _load_features_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [line.rstrip("\n") for line in fh if line.strip()]
    except FileNotFoundError:
        raise ArtifactError(f"features file not found: {path}")
    if not lines:
        raise DataError(f"features file {path} is empty")
    header = lines[0].split(",")
    if header[:2] != ["set_id", "observed_minutes"] or header[-1] != "label":
        raise DataError(f"unexpected features header in {path}")
    width = len(header) - 3
    rows, labels = [], []
    for number, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise DataError(f"{path}:{number}: wrong cell count")
        label = cells[-1]
        if label not in ("deteriorating", "recovering"):
            raise DataError(f"{path}:{number}: unlabeled feature row")
        try:
            rows.append([float(x) for x in cells[2 : 2 + width]])
        except ValueError:
            raise DataError(f"{path}:{number}: non-numeric feature value")
        labels.append(1.0 if label == "deteriorating" else 0.0)
    return np.asarray(rows), np.asarray(labels)


def _load_classifier(path: str):
    data = _read_json(path)
    if data.get("format_version") != CLASSIFIER_FORMAT_VERSION:
        raise ArtifactError(
            f"unsupported classifier format_version: {data.get('format_version')!r}"
        )
    try:
        return classifier_from_json(data["classifier"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"malformed classifier artifact: {exc}")


def cmd_monitor(args, config: PipelineConfig) -> int:
    sets = load_series_csv(args.series)
    if args.set_id:
        sets = [s for s in sets if s.set_id == args.set_id]
        if not sets:
            raise DataError(f"set {args.set_id!r} not present in {args.series}")
    model = _assemble_model(args, config)
    classifier = _load_classifier(args.classifier)
    with open(args.out, "w", encoding="utf-8") as fh:
        for mset in sets:
            state = monitor_series(model, classifier, mset)
            for record in state.trace:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
    return 0


def cmd_evaluate(args, config: PipelineConfig) -> int:
    sets = load_series_csv(args.series)
    _attach_labels(sets, args.labels)
    if args.folds is not None:
        config.detection.folds = args.folds
    if args.delay_start is not None:
        config.detection.delay_fraction = args.delay_start
    config.detection.validate()
    fractions = []
    for chunk in (args.prune or "0").split(","):
        chunk = chunk.strip()
        if chunk:
            fractions.append(float(chunk))
    results = {}
    for fraction in fractions:
        result = evaluate(sets, config, prune_fraction=fraction)
        results[f"prune_{fraction:g}"] = result.to_json()
    _write_json(args.out, {"format_version": 1, "results": results})
    return 0


def cmd_trace(args, config: PipelineConfig) -> int:
    domain, cross = load_structures(args.ks)
    store, mf, train_config = load_model(args.model)
    config.train = train_config
    dump: dict = {"format_version": 1}
    if mf is not None and cross.triplets:
        pair_correlation = {
            pair: triplet.correlation_id for pair, triplet in cross.triplets.items()
        }
        table = compute_strengths(
            mf, pair_correlation, len(cross.correlations),
            train_config.strength_softmax_scope,
        )
        dump["strengths"] = [
            {"head": h, "tail": t, "correlation": c, "view": v, "strength": s}
            for h, t, c, v, s in table.csv_rows()
        ]
    paths = {}
    for pair in sorted(cross.triplets):
        enumerated = enumerate_correlation_paths(
            pair[0], pair[1], cross, train_config.max_path_length
        )
        key = f"{pair[0][0]}:{pair[0][1]}|{pair[1][0]}:{pair[1][1]}"
        paths[key] = paths_to_json(pair[0], pair[1], enumerated)
    dump["correlation_paths"] = paths
    if args.series and args.dictionary:
        sets = load_series_csv(args.series)
        dictionaries = _load_dictionaries(args.dictionary, config)
        assignments = match_dataset(sets, dictionaries, config.structure)
        cross_ids = {
            channel: set(ids) for channel, ids in cross.concepts_by_channel().items()
        }
        walks = {}
        for ref in cross.concepts():
            channel, concept = ref
            lists = [per.get(channel, []) for _, per in sorted(assignments.items())]
            stats = transition_probabilities(lists, channel)
            ks = domain.get(channel)
            if ks is None:
                continue
            seed = int(
                np.random.default_rng(
                    [train_config.seed, 101, store.concept_index[ref]]
                ).integers(2**31)
            )
            sampled = sample_walks(
                start=concept,
                stats=stats,
                domain_ks=ks,
                cross_ids=cross_ids.get(channel, set()),
                count=train_config.walk_count,
                length=train_config.walk_length,
                bias=train_config.exploration_bias,
                seed=seed,
            )
            walks[f"{channel}:{concept}"] = walks_to_json(ref, sampled)
        dump["walks"] = walks
    _write_json(args.out, dump)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vitalks",
        description="Knowledge-structure pipeline for early detection on vital signs",
    )
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument(
        "--threads", type=int, default=None, help="worker threads (currently 1)"
    )
    parser.add_argument(
        "--profile",
        choices=("paper", "desk"),
        default="paper",
        help="baseline defaults before config/flag overrides",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--sets", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("shapelets", help="discover a shapelet dictionary")
    p.add_argument("--series", required=True)
    p.add_argument("--channel", required=True)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_shapelets)

    p = sub.add_parser("build-ks", help="build domain and cross structures")
    p.add_argument("--series", required=True)
    p.add_argument("--dictionary", action="append", metavar="CHANNEL=PATH")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_build_ks)

    p = sub.add_parser("train", help="train the joint embedding model")
    p.add_argument("--series", required=True)
    p.add_argument("--dictionary", action="append", metavar="CHANNEL=PATH")
    p.add_argument("--out", required=True)
    p.add_argument("--binary", action="store_true", help="write the binary model format")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("represent", help="export feature vectors to CSV")
    p.add_argument("--series", required=True)
    p.add_argument("--dictionary", action="append", metavar="CHANNEL=PATH")
    p.add_argument("--ks", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument(
        "--prefix",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="emit one row per observed prefix (default) or only full series",
    )
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_represent)

    p = sub.add_parser("fit", help="fit a classifier on a features CSV")
    p.add_argument("--features", required=True)
    p.add_argument("--kind", choices=("logistic", "gbdt"), default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("monitor", help="stream series through the detector")
    p.add_argument("--series", required=True)
    p.add_argument("--dictionary", action="append", metavar="CHANNEL=PATH")
    p.add_argument("--ks", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--set-id", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_monitor)

    p = sub.add_parser("evaluate", help="run the cross-validated protocol")
    p.add_argument("--series", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--prune", default=None, help="comma list of prune fractions")
    p.add_argument("--delay-start", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("trace", help="dump strengths, walks, and paths")
    p.add_argument("--ks", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--series", default=None)
    p.add_argument("--dictionary", action="append", metavar="CHANNEL=PATH")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_trace)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            config = load_config(args.config)
        elif args.profile == "desk":
            config = desk_config()
        else:
            config = PipelineConfig()
        if args.seed is not None:
            config.apply_seed(args.seed)
        if args.threads is not None:
            config.threads = args.threads
        config.validate()
        return args.handler(args, config)
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VitalksError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
