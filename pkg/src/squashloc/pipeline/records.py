"""On-disk record formats: detections CSV, label CSV and event JSON Lines."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from squashloc.classify.labels import ClassLabel
from squashloc.detect import Detection, DetectionMethod

EVENT_FIELDS = ("event_id", "class", "x_m", "y_m", "z_m", "t_s", "residual", "confidences", "detections")


class RecordError(ValueError):
    pass


@dataclass(frozen=True)
class Label:
    channel: int
    sample_index: int
    label: ClassLabel


@dataclass
class ClassifiedLocatedEvent:
    event_id: tuple[int, int]
    label: ClassLabel | None
    position: np.ndarray | None
    event_time: float
    residual: float | None
    detections: dict[int, int] = field(default_factory=dict)
    confidences: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.label is ClassLabel.FALSE_EVENT and self.position is not None:
            raise ValueError("false events carry no position")


def _num(value: float | None):
    if value is None:
        return None
    value = float(value)
    if not math.isfinite(value):
        return None
    return float(f"{value:.9g}")


def event_to_dict(event: ClassifiedLocatedEvent) -> dict:
    pos = event.position
    return {
        "event_id": list(event.event_id),
        "class": None if event.label is None else event.label.value,
        "x_m": None if pos is None else _num(pos[0]),
        "y_m": None if pos is None else _num(pos[1]),
        "z_m": None if pos is None else _num(pos[2]),
        "t_s": _num(event.event_time),
        "residual": _num(event.residual),
        "confidences": {k: _num(v) for k, v in event.confidences.items()},
        "detections": {str(c): int(s) for c, s in sorted(event.detections.items())},
    }


def event_from_dict(data: dict) -> ClassifiedLocatedEvent:
    if set(data) != set(EVENT_FIELDS):
        raise RecordError(f"event record fields {sorted(data)} differ from {list(EVENT_FIELDS)}")
    has_pos = data["x_m"] is not None
    return ClassifiedLocatedEvent(
        event_id=tuple(data["event_id"]),
        label=None if data["class"] is None else ClassLabel(data["class"]),
        position=np.array([data["x_m"], data["y_m"], data["z_m"]], dtype=float) if has_pos else None,
        event_time=float(data["t_s"]),
        residual=data["residual"],
        detections={int(c): int(s) for c, s in data["detections"].items()},
        confidences=dict(data["confidences"]),
    )


def write_events(path: str | Path, events: Iterable[ClassifiedLocatedEvent]) -> int:
    count = 0
    with open(path, "w") as fh:
        for event in events:
            fh.write(json.dumps(event_to_dict(event)) + "\n")
            count += 1
    return count


def read_events(path: str | Path) -> list[ClassifiedLocatedEvent]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(event_from_dict(json.loads(line)))
                except (json.JSONDecodeError, KeyError, ValueError) as exc:
                    raise RecordError(f"{path}:{lineno}: {exc}") from exc
    return out


def write_detections(path: str | Path, detections: Iterable[Detection]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", "sample_index", "score", "method"])
        for d in detections:
            writer.writerow([d.channel, d.sample_index, f"{d.score:.9g}", d.method.value])


def read_detections(path: str | Path) -> list[Detection]:
    out = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), 2):
            try:
                out.append(Detection(int(row["sample_index"]), int(row["channel"]),
                                     float(row["score"]), DetectionMethod(row["method"])))
            except (KeyError, ValueError, TypeError) as exc:
                raise RecordError(f"{path}:{lineno}: bad detection row {row}") from exc
    return out


def split_by_channel(detections: Iterable[Detection], n_channels: int) -> list[list[Detection]]:
    per = [[] for _ in range(n_channels)]
    for d in detections:
        if not 0 <= d.channel < n_channels:
            raise RecordError(f"detection on channel {d.channel}, array has {n_channels}")
        per[d.channel].append(d)
    return [sorted(p) for p in per]


def write_labels(path: str | Path, labels: Iterable[Label]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", "sample_index", "class"])
        for lab in labels:
            writer.writerow([lab.channel, lab.sample_index, lab.label.value])


def read_labels(path: str | Path) -> list[Label]:
    out = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), 2):
            try:
                out.append(Label(int(row["channel"]), int(row["sample_index"]), ClassLabel(row["class"])))
            except (KeyError, ValueError, TypeError) as exc:
                raise RecordError(f"{path}:{lineno}: bad label row {row}") from exc
    return out


def labels_by_channel(labels: Sequence[Label], n_channels: int) -> list[list[Label]]:
    per = [[] for _ in range(n_channels)]
    for lab in labels:
        if not 0 <= lab.channel < n_channels:
            raise RecordError(f"label on channel {lab.channel}, array has {n_channels}")
        per[lab.channel].append(lab)
    return [sorted(p, key=lambda l: l.sample_index) for p in per]
