"""Command-line entry point: ``squashloc <subcommand> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 bad input data,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from squashloc.classify.crossval import StratificationError, train_bundle
from squashloc.classify.fusion import BundleFormatError, ClassifierBundle
from squashloc.classify.labels import ClassLabel
from squashloc.classify.mlp import DegenerateLabelsError, DivergenceError, TrainingConfig
from squashloc.detect import WarmupError, evaluate_detector
from squashloc.geometry import GeometryError
from squashloc.localize import LocalizationError, SingularGeometryError
from squashloc.pipeline.audio import IngestionError, ingest, write_wav
from squashloc.pipeline.config import ConfigError, PipelineConfig, load_config
from squashloc.pipeline.matching import match_detections
from squashloc.pipeline.records import (
    ClassifiedLocatedEvent,
    Label,
    RecordError,
    read_detections,
    read_events,
    read_labels,
    split_by_channel,
    write_detections,
    write_events,
    write_labels,
)
from squashloc.pipeline.run import (
    BundleClassifier,
    PipelineError,
    compare_localizations,
    detect_block,
    load_classifier,
    locate,
    process_block,
    training_datasets,
)
from squashloc.simulate import arrival_samples, error_experiment, simulate_session

logger = logging.getLogger("squashloc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

DATA_ERRORS = (IngestionError, RecordError, BundleFormatError, WarmupError, StratificationError,
               DegenerateLabelsError, FileNotFoundError, IsADirectoryError)
NUMERICAL_ERRORS = (LocalizationError, SingularGeometryError, DivergenceError, FloatingPointError)


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if getattr(args, "input", None):
        cfg = replace(cfg, io=replace(cfg.io, input=tuple(Path(p) for p in args.input)))
    return cfg


def _block(cfg: PipelineConfig):
    if not cfg.io.input:
        raise ConfigError("no input audio: pass --input or set io.input in the config")
    return ingest(cfg.io.input, cfg.array.sample_rate, len(cfg.array), cfg.io.channel_map)


def _output(args, cfg: PipelineConfig | None, default: str) -> Path:
    if args.output:
        return Path(args.output)
    if cfg is not None and cfg.io.output is not None:
        return cfg.io.output
    return Path(default)


def _write_json(path: Path | None, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path is None:
        print(text)
    else:
        path.write_text(text + "\n")


def _groups_from_detections(cfg: PipelineConfig, detections) -> list[ClassifiedLocatedEvent]:
    per_channel = split_by_channel(detections, len(cfg.array))
    groups = match_detections(per_channel, cfg.matcher.max_spread, cfg.matcher.min_channels)
    out = []
    for group, dets in groups:
        first = min(dets, key=lambda d: (d.sample_index, d.channel))
        out.append(ClassifiedLocatedEvent(
            event_id=(first.channel, first.sample_index), label=None, position=None,
            event_time=first.sample_index / cfg.array.sample_rate, residual=None,
            detections=group.detections))
    return out


def cmd_simulate(args) -> int:
    cfg = _config(args)
    session = simulate_session(args.events, cfg.array, cfg.geometry, args.snr_db, args.seed)
    wav = write_wav(_output(args, None, "simulated.wav"), session.block, args.sample_format)
    write_labels(wav.with_suffix(".labels.csv"), (Label(*lab) for lab in session.labels))
    truth = []
    fs = cfg.array.sample_rate
    for ev in session.events:
        onsets = np.rint(arrival_samples(ev.position, ev.time, cfg.array)).astype(int)
        first = int(np.argmin(onsets))
        truth.append(ClassifiedLocatedEvent(
            event_id=(first, int(onsets[first])), label=ev.surface, position=ev.position,
            event_time=ev.time, residual=0.0,
            detections={ch: int(s) for ch, s in enumerate(onsets)}))
    write_events(wav.with_suffix(".truth.jsonl"), truth)
    logger.info("wrote %s (%d events, %.2f s at %g Hz)", wav, len(truth),
                session.block.samples.shape[1] / fs, fs)
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _config(args)
    per_channel = detect_block(_block(cfg), cfg)
    dets = sorted(d for ch in per_channel for d in ch)
    out = _output(args, None, "detections.csv")
    write_detections(out, dets)
    logger.info("wrote %d detections to %s", len(dets), out)
    return EXIT_OK


def cmd_match(args) -> int:
    cfg = _config(args)
    groups = _groups_from_detections(cfg, read_detections(args.detections))
    out = _output(args, None, "groups.jsonl")
    write_events(out, groups)
    logger.info("wrote %d groups to %s", len(groups), out)
    return EXIT_OK


def cmd_localize(args) -> int:
    cfg = _config(args)
    events = [locate(ev, cfg) for ev in read_events(args.groups)]
    events.sort(key=lambda e: (e.event_time, tuple(e.event_id)))
    out = _output(args, cfg, "events.jsonl")
    write_events(out, events)
    logger.info("wrote %d events to %s", len(events), out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    block = _block(cfg)
    per_channel = detect_block(block, cfg)
    datasets = training_datasets(block, per_channel, read_labels(args.labels),
                                 cfg.classifier.oracle_tolerance, cfg.classifier.feature_half_width)
    hyper = TrainingConfig(lr=args.lr, epochs=args.epochs, seed=args.seed)
    bundle = train_bundle(datasets, hyper, folds=args.folds, seed=args.seed, log=logger.info)
    out = bundle.save(_output(args, None, "bundle.sqlb"))
    logger.info("wrote classifier bundle %s", out)
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _config(args)
    if args.bundle:
        classifier = BundleClassifier(ClassifierBundle.load(args.bundle), cfg.classifier.feature_half_width)
    else:
        classifier = load_classifier(cfg)
    if classifier is None:
        raise ConfigError("predict needs --bundle or a classifier section in the config")
    events = process_block(_block(cfg), cfg, classifier, localize=False)
    out = _output(args, None, "predictions.jsonl")
    write_events(out, events)
    logger.info("wrote %d classified events to %s", len(events), out)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    events = process_block(_block(cfg), cfg, load_classifier(cfg))
    out = _output(args, cfg, "events.jsonl")
    write_events(out, events)
    logger.info("wrote %d events to %s", len(events), out)
    return EXIT_OK


def cmd_eval(args) -> int:
    out = Path(args.output) if args.output else None
    if args.detections:
        if not args.labels:
            raise ConfigError("--detections needs --labels")
        ev = evaluate_detector(read_detections(args.detections), read_labels(args.labels), args.tolerance)
        errors = np.asarray(ev.errors, dtype=float)
        _write_json(out, {
            "tp": ev.tp, "fp": ev.fp, "fn": ev.fn, "fdr": ev.fdr, "fnr": ev.fnr,
            "timing_error_mean": float(errors.mean()) if errors.size else None,
            "timing_error_std": float(errors.std()) if errors.size else None,
        })
        return EXIT_OK
    if not (args.events and args.reference):
        raise ConfigError("eval needs --detections/--labels or --events/--reference")
    found = {tuple(e.event_id): e for e in read_events(args.events)}
    ref = read_events(args.reference)
    # pair each reference event with the found event sharing the most detections
    pairs_a, pairs_b, correct = [], [], 0
    for r in ref:
        best = max(found.values(), default=None,
                   key=lambda e: sum(abs(e.detections.get(c, -10**9) - s) <= args.tolerance
                                     for c, s in r.detections.items()))
        if best is None or not any(abs(best.detections.get(c, -10**9) - s) <= args.tolerance
                                   for c, s in r.detections.items()):
            continue
        pairs_a.append(replace(best, event_id=tuple(r.event_id)))
        pairs_b.append(r)
        correct += best.label is r.label
    stats = compare_localizations(pairs_a, pairs_b)
    stats.update(matched=len(pairs_b), reference=len(ref), class_accuracy=correct / len(ref) if ref else None)
    _write_json(out, stats)
    return EXIT_OK


def cmd_plot_errors(args) -> int:
    cfg = _config(args)
    table = error_experiment(args.points, args.sigmas, cfg.array, cfg.geometry, args.seed, cfg.localizer)
    out = _output(args, None, "errors.csv")
    csv_path = out.with_suffix(".csv")
    table.write(csv_path)
    for sigma in table.errors:
        logger.info("sigma=%g samples: median %.4f m, p90 %.4f m", sigma, table.median(sigma),
                    table.percentile(sigma, 90))
    if out.suffix.lower() in (".png", ".pdf", ".svg"):
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        q = np.arange(1, 101)
        for sigma, errs in table.errors.items():
            ax.plot(q, [table.percentile(sigma, p) for p in q], label=f"σ = {sigma:g} samples")
        ax.set_xlabel("percentile of points")
        ax.set_ylabel("localisation error (m)")
        ax.set_yscale("log")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out)
        plt.close(fig)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline configuration")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--output", help="output path")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="squashloc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, "render a synthetic match to WAV plus labels and truth")
    p.add_argument("--events", type=int, default=20)
    p.add_argument("--snr-db", type=float, default=20.0)
    p.add_argument("--sample-format", choices=("float32", "int16", "int32"), default="float32")

    for name, func, text in (("detect", cmd_detect, "per-channel onset detection"),
                             ("run", cmd_run, "detect, match, classify and localise"),
                             ("train", cmd_train, "train a classifier bundle from labelled audio"),
                             ("predict", cmd_predict, "classify matched events without localising")):
        p = add(name, func, text)
        p.add_argument("--input", nargs="+", help="WAV file(s); overrides io.input")
        if name == "train":
            p.add_argument("--labels", required=True)
            p.add_argument("--epochs", type=int, default=200)
            p.add_argument("--lr", type=float, default=1e-3)
            p.add_argument("--folds", type=int, default=8)
        if name == "predict":
            p.add_argument("--bundle")

    p = add("match", cmd_match, "group detections across channels")
    p.add_argument("--detections", required=True)

    p = add("localize", cmd_localize, "localise matched groups")
    p.add_argument("--groups", required=True)

    p = add("eval", cmd_eval, "score detections against labels or events against a reference")
    p.add_argument("--detections")
    p.add_argument("--labels")
    p.add_argument("--events")
    p.add_argument("--reference")
    p.add_argument("--tolerance", type=int, default=480, help="matching tolerance in samples")

    p = add("plot-errors", cmd_plot_errors, "localisation error percentiles over random points")
    p.add_argument("--points", type=int, default=10000)
    p.add_argument("--sigmas", type=float, nargs="+", default=[0.0, 1.0, 10.0, 50.0])
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, PipelineError):
        return _exit_code(exc.cause)
    if isinstance(exc, (ConfigError, GeometryError)):
        return EXIT_USAGE
    if isinstance(exc, NUMERICAL_ERRORS):
        return EXIT_NUMERICAL
    if isinstance(exc, DATA_ERRORS + (ValueError, OSError)):
        return EXIT_DATA
    raise exc


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        code = _exit_code(exc)
        logger.error("%s", exc)
        return code


if __name__ == "__main__":
    sys.exit(main())
