"""Feature vectors cut from a channel around a detection."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

DEFAULT_HALF_WIDTH = 300


class FeatureKind(str, Enum):
    T1 = "T1"  # raw samples centred on the detection
    T2 = "T2"  # DFT magnitude of the samples following the detection


class FeatureBoundaryError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureVector:
    kind: FeatureKind
    values: np.ndarray
    channel: int = 0
    detection_index: int = -1

    def __len__(self) -> int:
        return self.values.size


def _index(detection) -> int:
    return int(getattr(detection, "sample_index", detection))


def _channel(detection) -> int:
    return int(getattr(detection, "channel", 0))


def extract_t1(stream, detection, w: int = DEFAULT_HALF_WIDTH, offset: int = 0) -> FeatureVector:
    """The 2w+1 samples centred on the detection.

    ``offset`` is the absolute sample index of ``stream[0]``.
    """
    x = np.asarray(stream, dtype=float)
    d = _index(detection) - offset
    if d - w < 0 or d + w >= x.size:
        raise FeatureBoundaryError(f"T1 window [{d - w}, {d + w}] exceeds stream of {x.size}")
    return FeatureVector(FeatureKind.T1, x[d - w:d + w + 1].copy(), _channel(detection), _index(detection))


def extract_t2(stream, detection, w: int = DEFAULT_HALF_WIDTH, offset: int = 0) -> FeatureVector:
    """|DFT| of the w samples starting at the detection."""
    x = np.asarray(stream, dtype=float)
    d = _index(detection) - offset
    if d < 0 or d + w > x.size:
        raise FeatureBoundaryError(f"T2 window [{d}, {d + w}) exceeds stream of {x.size}")
    return FeatureVector(FeatureKind.T2, np.abs(np.fft.fft(x[d:d + w])), _channel(detection),
                         _index(detection))


def extract(kind: FeatureKind | str, stream, detection, w: int = DEFAULT_HALF_WIDTH,
            offset: int = 0) -> FeatureVector:
    if FeatureKind(kind) is FeatureKind.T1:
        return extract_t1(stream, detection, w, offset)
    return extract_t2(stream, detection, w, offset)


def normalize(values, kind: FeatureKind | str) -> np.ndarray:
    """Per-vector scaling: T1 by max |x|, T2 by its sum. Works row-wise on 2-D input."""
    v = np.asarray(values, dtype=float)
    if FeatureKind(kind) is FeatureKind.T1:
        scale = np.max(np.abs(v), axis=-1, keepdims=True)
    else:
        scale = np.sum(v, axis=-1, keepdims=True)
    return v / np.where(scale > 0, scale, 1.0)
