"""Per-class classifier bundle, its file format and the label fusion rule."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from squashloc.classify.features import FeatureKind
from squashloc.classify.labels import IMPACT_CLASSES, ClassLabel
from squashloc.classify.mlp import MlpModel

MAGIC = b"SQLB"
FORMAT_VERSION = 1


class BundleFormatError(ValueError):
    pass


@dataclass
class BundleEntry:
    model: MlpModel
    channel: int
    input_kind: FeatureKind
    cutoff: float
    precision: float

    def __post_init__(self) -> None:
        self.input_kind = FeatureKind(self.input_kind)
        if not 0.0 < self.cutoff < 1.0:
            raise ValueError(f"cutoff must lie in (0, 1), got {self.cutoff}")
        if not 0.0 <= self.precision <= 1.0:
            raise ValueError(f"precision must lie in [0, 1], got {self.precision}")


@dataclass
class ClassifierBundle:
    entries: dict[ClassLabel, BundleEntry]

    def __post_init__(self) -> None:
        self.entries = {ClassLabel(k): v for k, v in self.entries.items()}
        if set(self.entries) != set(IMPACT_CLASSES):
            missing = sorted(c.value for c in set(IMPACT_CLASSES) - set(self.entries))
            raise ValueError(f"bundle needs exactly one entry per impact class; missing {missing}")

    def channels(self) -> set[int]:
        return {e.channel for e in self.entries.values()}

    def save(self, path: str | Path) -> Path:
        """Write the binary bundle and a JSON manifest next to it."""
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", FORMAT_VERSION, len(self.entries)))
            for label in IMPACT_CLASSES:
                entry = self.entries[label]
                params = entry.model.parameters()
                header = json.dumps({
                    "format_version": FORMAT_VERSION,
                    "class": label.value,
                    "arch": entry.model.layer_sizes,
                    "activation": entry.model.activation,
                    "input_kind": entry.input_kind.value,
                    "channel": entry.channel,
                    "normalization": entry.model.normalization,
                    "n_params": int(params.size),
                }, sort_keys=True).encode()
                fh.write(struct.pack("<I", len(header)))
                fh.write(header)
                fh.write(params.astype("<f8").tobytes())
                fh.write(np.array([entry.cutoff, entry.precision], dtype="<f8").tobytes())
        manifest = {
            "format_version": FORMAT_VERSION,
            "bundle": path.name,
            "entries": [
                {
                    "class": label.value,
                    "channel": self.entries[label].channel,
                    "input_kind": self.entries[label].input_kind.value,
                    "arch": self.entries[label].model.layer_sizes,
                    "cutoff": self.entries[label].cutoff,
                    "precision": self.entries[label].precision,
                }
                for label in IMPACT_CLASSES
            ],
        }
        manifest_path(path).write_text(json.dumps(manifest, indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "ClassifierBundle":
        data = Path(path).read_bytes()
        if data[:4] != MAGIC:
            raise BundleFormatError("not a classifier bundle")
        version, count = struct.unpack_from("<II", data, 4)
        if version != FORMAT_VERSION:
            raise BundleFormatError(f"unsupported bundle version {version}")
        pos = 12
        entries = {}
        try:
            for _ in range(count):
                (hlen,) = struct.unpack_from("<I", data, pos)
                pos += 4
                header = json.loads(data[pos:pos + hlen])
                pos += hlen
                n = header["n_params"]
                params = np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(float)
                pos += 8 * n
                cutoff, precision = np.frombuffer(data, dtype="<f8", count=2, offset=pos)
                pos += 16
                model = MlpModel.zeros(header["arch"], header["normalization"])
                model.activation = header["activation"]
                model.set_parameters(params)
                entries[ClassLabel(header["class"])] = BundleEntry(
                    model, int(header["channel"]), header["input_kind"], float(cutoff), float(precision)
                )
        except (struct.error, KeyError, ValueError) as exc:
            raise BundleFormatError(f"corrupt bundle: {exc}") from exc
        if pos != len(data):
            raise BundleFormatError("trailing bytes after last entry")
        return cls(entries)


def manifest_path(bundle_path: str | Path) -> Path:
    bundle_path = Path(bundle_path)
    return bundle_path.with_name(bundle_path.name + ".manifest.json")


def fusion_scores(confidences: Mapping, bundle: ClassifierBundle) -> dict[ClassLabel, float]:
    """Cutoff-normalised, precision-weighted score of every impact class."""
    conf = {ClassLabel(k): float(v) for k, v in confidences.items()}
    missing = [c.value for c in IMPACT_CLASSES if c not in conf]
    if missing:
        raise KeyError(f"missing confidences for {missing}")
    total_prec = sum(bundle.entries[c].precision for c in IMPACT_CLASSES)
    scores = {}
    for c in IMPACT_CLASSES:
        e = bundle.entries[c]
        weight = e.precision / total_prec if total_prec > 0 else 0.0
        scores[c] = (conf[c] - e.cutoff) / (1.0 - e.cutoff) * weight
    return scores


def fuse(confidences: Mapping, bundle: ClassifierBundle) -> ClassLabel:
    """Class label from per-class confidences.

    Only classes whose confidence strictly exceeds their cutoff compete; the
    highest score wins, earlier classes in IMPACT_CLASSES winning ties. With
    no eligible class the event is a false event.
    """
    scores = fusion_scores(confidences, bundle)
    conf = {ClassLabel(k): float(v) for k, v in confidences.items()}
    best, best_score = ClassLabel.FALSE_EVENT, -np.inf
    for c in IMPACT_CLASSES:
        if conf[c] > bundle.entries[c].cutoff and scores[c] > best_score:
            best, best_score = c, scores[c]
    return best
