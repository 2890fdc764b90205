"""End-to-end orchestration: detect, match, classify, localise."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import replace
from concurrent.futures import ThreadPoolExecutor
from typing import Protocol, Sequence

import numpy as np

from squashloc.classify.features import FeatureBoundaryError, FeatureKind, extract
from squashloc.classify.fusion import ClassifierBundle, fuse
from squashloc.classify.labels import IMPACT_CLASSES, ClassLabel
from squashloc.classify.mlp import predict
from squashloc.detect import Detection, make_detector
from squashloc.localize import (
    EventGroup,
    LocalizationError,
    localize_3d,
    localize_on_plane,
)
from squashloc.pipeline.audio import ingest
from squashloc.pipeline.config import PipelineConfig
from squashloc.pipeline.matching import match_detections
from squashloc.pipeline.records import ClassifiedLocatedEvent, Label, read_labels
from squashloc.signal import AudioBlock
from squashloc.simulate import SURFACE_OF

logger = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """A stage failed; ``stage`` and ``where`` identify the failing unit."""

    def __init__(self, stage: str, where: str, cause: Exception):
        super().__init__(f"[{stage}] {where}: {cause}")
        self.stage = stage
        self.where = where
        self.cause = cause


class Classifier(Protocol):
    def confidences(self, group: EventGroup, detections: Sequence[Detection],
                    block: AudioBlock) -> dict[ClassLabel, float]: ...

    def decide(self, confidences: dict[ClassLabel, float]) -> ClassLabel: ...


class BundleClassifier:
    """Runs each class's best network on its designated channel and fuses the results.

    A class whose channel did not detect the event scores 0.
    """

    def __init__(self, bundle: ClassifierBundle, half_width: int = 300):
        self.bundle = bundle
        self.half_width = half_width

    def confidences(self, group, detections, block):
        by_channel = {d.channel: d for d in detections}
        out = {}
        for label in IMPACT_CLASSES:
            entry = self.bundle.entries[label]
            det = by_channel.get(entry.channel)
            if det is None:
                out[label] = 0.0
                continue
            try:
                feature = extract(entry.input_kind, block.samples[entry.channel], det,
                                  self.half_width, block.start_index)
            except FeatureBoundaryError:
                out[label] = 0.0
                continue
            out[label] = predict(entry.model, feature)
        return out

    def decide(self, confidences):
        return fuse(confidences, self.bundle)


class LabelOracle:
    """Classifier stand-in that reads the answer from reference labels.

    A group takes the class most of its detections were labelled with
    (labels within ``tolerance`` samples on the same channel); unlabelled
    groups are false events.
    """

    def __init__(self, labels: Sequence[Label], tolerance: int = 480):
        self.tolerance = tolerance
        self._by_channel: dict[int, tuple[np.ndarray, list[ClassLabel]]] = {}
        grouped: dict[int, list[Label]] = {}
        for lab in labels:
            grouped.setdefault(lab.channel, []).append(lab)
        for ch, labs in grouped.items():
            labs.sort(key=lambda l: l.sample_index)
            self._by_channel[ch] = (np.array([l.sample_index for l in labs]), [l.label for l in labs])

    def lookup(self, det: Detection) -> ClassLabel | None:
        if det.channel not in self._by_channel:
            return None
        idx, labs = self._by_channel[det.channel]
        pos = int(np.searchsorted(idx, det.sample_index))
        best = None
        for j in (pos - 1, pos):
            if 0 <= j < len(idx):
                gap = abs(int(idx[j]) - det.sample_index)
                if gap <= self.tolerance and (best is None or gap < best[0]):
                    best = (gap, labs[j])
        return None if best is None else best[1]

    def confidences(self, group, detections, block):
        votes = Counter(lab for lab in map(self.lookup, detections) if lab is not None)
        total = sum(votes.values())
        return {c: (votes[c] / total if total else 0.0) for c in IMPACT_CLASSES}

    def decide(self, confidences):
        best = max(IMPACT_CLASSES, key=lambda c: confidences[c])
        return best if confidences[best] > 0.5 else ClassLabel.FALSE_EVENT


def _detect_channel(samples: np.ndarray, config: PipelineConfig, channel: int,
                    start_index: int) -> list[Detection]:
    detector = make_detector(config.method, config.detector, channel, start_index)
    out: list[Detection] = []
    step = config.io.block_size
    for lo in range(0, samples.size, step):
        out.extend(detector.process(samples[lo:lo + step]))
    return out


def detect_block(block: AudioBlock, config: PipelineConfig) -> list[list[Detection]]:
    """Streaming detection on every channel, fanned out over ``config.workers`` threads."""

    def one(ch: int) -> list[Detection]:
        try:
            return _detect_channel(block.samples[ch], config, ch, block.start_index)
        except Exception as exc:  # tag and re-raise
            raise PipelineError("detect", f"channel {ch}", exc) from exc

    channels = range(block.channels)
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(one, channels))
    return [one(ch) for ch in channels]


def _event_id(detections: Sequence[Detection]) -> tuple[int, int]:
    first = min(detections, key=lambda d: (d.sample_index, d.channel))
    return (first.channel, first.sample_index)


def _process_group(group: EventGroup, dets: list[Detection], block: AudioBlock,
                   config: PipelineConfig, classifier: Classifier | None, localize: bool = True):
    event_id = _event_id(dets)
    where = f"event {event_id}"
    fs = config.array.sample_rate
    try:
        confidences: dict[ClassLabel, float] = {}
        label = None
        if classifier is not None:
            confidences = classifier.confidences(group, dets, block)
            label = classifier.decide(confidences)
    except Exception as exc:
        raise PipelineError("classify", where, exc) from exc

    if label not in SURFACE_OF and len(group) < config.matcher.min_channels:
        return None  # too few channels without a surface to pin the event to
    record = ClassifiedLocatedEvent(
        event_id=event_id, label=label, position=None, event_time=event_id[1] / fs, residual=None,
        detections=group.detections, confidences={c.value: v for c, v in confidences.items()})
    if not localize:
        return record
    return locate(record, config)


def locate(record: ClassifiedLocatedEvent, config: PipelineConfig) -> ClassifiedLocatedEvent:
    """Localise a matched (and possibly classified) event from its detections.

    Surface classes are solved on their surface, anything else in 3-D; false
    events are returned untouched. A solver that finds no admissible point
    yields the record without a position.
    """
    label = record.label
    if label is ClassLabel.FALSE_EVENT:
        return record
    where = f"event {tuple(record.event_id)}"
    group = EventGroup({int(c): float(s) for c, s in record.detections.items()})
    try:
        if label in SURFACE_OF:
            plane = config.geometry.surface(SURFACE_OF[label])
            loc = localize_on_plane(group, config.array, plane, config.geometry, config.localizer)
        else:
            loc = localize_3d(group, config.array, config.geometry, config.localizer)
    except LocalizationError as exc:
        logger.warning("%s: %s", where, exc)
        return replace(record, residual=exc.best_residual)
    except Exception as exc:
        raise PipelineError("localize", where, exc) from exc
    return replace(record, position=loc.position, event_time=loc.event_time, residual=loc.residual)


def process_block(block: AudioBlock, config: PipelineConfig, classifier: Classifier | None = None,
                  localize: bool = True) -> list[ClassifiedLocatedEvent]:
    """Detect, match, classify and (unless ``localize`` is off) localise one block."""
    per_channel = detect_block(block, config)
    min_channels = config.matcher.plane_min_channels if classifier else config.matcher.min_channels
    groups = match_detections(per_channel, config.matcher.max_spread, min_channels)

    def one(item):
        return _process_group(item[0], item[1], block, config, classifier, localize)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(one, groups))
    else:
        results = [one(g) for g in groups]
    events = [e for e in results if e is not None]
    events.sort(key=lambda e: (e.event_time, e.event_id))
    return events


def load_classifier(config: PipelineConfig) -> Classifier | None:
    cls = config.classifier
    if cls.bundle is not None:
        return BundleClassifier(ClassifierBundle.load(cls.bundle), cls.feature_half_width)
    if cls.oracle_labels is not None:
        return LabelOracle(read_labels(cls.oracle_labels), cls.oracle_tolerance)
    return None


def run(config: PipelineConfig, block: AudioBlock | None = None,
        classifier: Classifier | None = None) -> list[ClassifiedLocatedEvent]:
    """Ingest (unless ``block`` is given), then detect, match, classify and localise.

    Events come back ordered by event time. Without a classifier every
    group of at least ``min_channels`` detections is localised in 3-D and
    carries no class.
    """
    if block is None:
        try:
            block = ingest(config.io.input, config.array.sample_rate, len(config.array),
                           config.io.channel_map)
        except Exception as exc:
            raise PipelineError("ingest", ", ".join(map(str, config.io.input)), exc) from exc
    if classifier is None:
        classifier = load_classifier(config)
    return process_block(block, config, classifier)


def training_datasets(block: AudioBlock, per_channel: Sequence[Sequence[Detection]],
                      labels: Sequence[Label], tolerance: int = 480, half_width: int = 300,
                      kinds: Sequence[FeatureKind] = (FeatureKind.T1, FeatureKind.T2)):
    """Feature matrices and classes for every (channel, feature kind).

    Each detection takes the class of the nearest label on its channel within
    ``tolerance`` samples; unlabelled detections are false events. Detections
    too close to either end of the block are skipped.
    """
    oracle = LabelOracle(labels, tolerance)
    datasets = {}
    for ch, dets in enumerate(per_channel):
        for kind in kinds:
            rows, classes = [], []
            for det in dets:
                try:
                    feat = extract(kind, block.samples[ch], det, half_width, block.start_index)
                except FeatureBoundaryError:
                    continue
                rows.append(feat.values)
                classes.append(oracle.lookup(det) or ClassLabel.FALSE_EVENT)
            if rows:
                datasets[(ch, FeatureKind(kind))] = (np.stack(rows), classes)
    return datasets


def compare_localizations(events_a: Sequence[ClassifiedLocatedEvent],
                          events_b: Sequence[ClassifiedLocatedEvent]) -> dict[str, float]:
    """Mean and standard deviation of the distance between paired positions.

    Both lists must hold the same event ids in the same order. Pairs where
    either side has no position are skipped and counted.
    """
    if len(events_a) != len(events_b):
        raise ValueError(f"lists differ in length: {len(events_a)} vs {len(events_b)}")
    dists = []
    skipped = 0
    for a, b in zip(events_a, events_b):
        if tuple(a.event_id) != tuple(b.event_id):
            raise ValueError(f"event id mismatch: {a.event_id} vs {b.event_id}")
        if a.position is None or b.position is None:
            skipped += 1
            continue
        dists.append(float(np.linalg.norm(np.asarray(a.position) - np.asarray(b.position))))
    d = np.array(dists)
    return {
        "mean_distance": float(d.mean()) if d.size else float("nan"),
        "std_distance": float(d.std()) if d.size else float("nan"),
        "n": int(d.size),
        "skipped": skipped,
    }
