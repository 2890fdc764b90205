"""Per-channel onset detection.

Two detectors are provided. ``detect_gaussian`` flags samples that sit too
many standard deviations away from a windowed running estimate of the
background. ``detect_surprise`` scores each w-sample window by the surprise
(KL divergence) a new power spectrum causes in a diagonal Gaussian model of
recent spectra, then pins the onset down inside the flagged window with a
1-d version of the same test.
"""

from __future__ import annotations

import bisect
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numba
import numpy as np

from squashloc.signal import (
    VARIANCE_FLOOR,
    SpectralModel,
    kl_gaussian,
    kl_gaussian_1d,
    power_spectrum,
)


class DetectionMethod(str, Enum):
    GAUSSIAN_THRESHOLD = "gaussian_threshold"
    SURPRISE = "surprise"


class WarmupError(ValueError):
    """Stream too short to initialise the background model."""


@dataclass(frozen=True, order=True)
class Detection:
    sample_index: int
    channel: int
    score: float = field(compare=False)
    method: DetectionMethod = field(compare=False, default=DetectionMethod.GAUSSIAN_THRESHOLD)


@dataclass(frozen=True)
class DetectorParams:
    threshold: float = 8.0
    window_w: int = 256
    history_n: int = 32
    refractory: int = 4800
    welford_capacity: int = 9600
    refine_threshold: float = 0.15
    taper: str = "hann"

    def __post_init__(self) -> None:
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.refractory < 0:
            raise ValueError("refractory must be non-negative")
        w = self.window_w
        if w <= 0 or w & (w - 1):
            raise ValueError(f"window_w must be a power of two, got {w}")
        if self.history_n < 2 or self.welford_capacity < 2:
            raise ValueError("history_n and welford_capacity must be at least 2")

    @classmethod
    def for_method(cls, method: DetectionMethod | str, **overrides) -> "DetectorParams":
        """Defaults for ``method``; the surprise threshold scales with w."""
        method = DetectionMethod(method)
        if method is DetectionMethod.SURPRISE and "threshold" not in overrides:
            overrides["threshold"] = 5.0 * overrides.get("window_w", cls.window_w)
        return cls(**overrides)


@numba.njit(cache=True, nogil=True)
def _gaussian_scan(x, base, threshold, refractory, ring, fstate, istate):
    # fstate = [mean, m2]; istate = [head, count, resume]; indices are absolute
    capacity = ring.size
    mean, m2 = fstate[0], fstate[1]
    head, count, resume = istate[0], istate[1], istate[2]
    out_idx = np.empty(x.size, dtype=np.int64)
    out_score = np.empty(x.size, dtype=np.float64)
    n_out = 0
    for i in range(x.size):
        if base + i < resume:
            continue
        xi = x[i]
        if count >= capacity:
            var = m2 / (count - 1)
            dev = abs(xi - mean)
            if var > 0.0:
                z = dev / math.sqrt(var)
            elif dev > 0.0:
                z = math.inf
            else:
                z = 0.0
            if z >= threshold:
                out_idx[n_out] = base + i
                out_score[n_out] = z
                n_out += 1
                resume = base + i + max(refractory, 1)
                continue
        # Welford step, then drop the oldest sample once the window is full
        count += 1
        delta = xi - mean
        mean += delta / count
        m2 += delta * (xi - mean)
        if count > capacity:
            old = ring[head]
            k = count - 1
            mean_without = (count * mean - old) / k
            m2 -= (old - mean_without) * (old - mean)
            mean = mean_without
            count = k
            if m2 < 0.0:
                m2 = 0.0
        ring[head] = xi
        head += 1
        if head == capacity:
            head = 0
    fstate[0], fstate[1] = mean, m2
    istate[0], istate[1], istate[2] = head, count, resume
    return out_idx[:n_out], out_score[:n_out]


class GaussianDetector:
    """Streaming z-score detector for one channel.

    Feed consecutive blocks to ``process``; the background window, refractory
    timer and sample clock carry over between calls, so block boundaries do
    not change the output.
    """

    method = DetectionMethod.GAUSSIAN_THRESHOLD

    def __init__(self, params: DetectorParams, channel: int = 0, start_index: int = 0):
        self.params = params
        self.channel = channel
        self.position = start_index
        self._ring = np.zeros(params.welford_capacity)
        self._fstate = np.zeros(2)
        self._istate = np.array([0, 0, start_index], dtype=np.int64)

    @property
    def warm(self) -> bool:
        return self._istate[1] >= self.params.welford_capacity

    def process(self, samples) -> list[Detection]:
        x = np.ascontiguousarray(samples, dtype=np.float64)
        idx, score = _gaussian_scan(x, self.position, float(self.params.threshold),
                                    int(self.params.refractory), self._ring, self._fstate,
                                    self._istate)
        self.position += x.size
        return [Detection(int(i), self.channel, float(z), self.method) for i, z in zip(idx, score)]


def detect_gaussian(channel_stream, params: DetectorParams, channel: int = 0,
                    offset: int = 0) -> list[Detection]:
    """Flag samples whose z-score against the windowed background reaches the threshold.

    Background statistics are frozen while the refractory period runs so that
    event samples never inflate the noise estimate.
    """
    x = np.asarray(channel_stream, dtype=np.float64)
    if x.size == 0:
        return []
    if x.size <= params.welford_capacity:
        raise WarmupError(
            f"stream of {x.size} samples does not exceed welford_capacity={params.welford_capacity}"
        )
    return GaussianDetector(params, channel, offset).process(x)


def refine_time(window_samples, bootstrap, threshold: float = 0.15,
                history: int = 32) -> int:
    """Offset inside ``window_samples`` where the onset begins.

    The prior is a 1-d Gaussian fitted to ``bootstrap``. Each in-window sample
    is folded into it at weight 1/(history+1) and the first sample whose
    surprise reaches ``threshold`` is returned; failing that, the most
    surprising sample.
    """
    window = np.asarray(window_samples, dtype=float)
    boot = np.asarray(bootstrap, dtype=float)
    if window.size == 0:
        raise ValueError("empty window")
    if boot.size < 2:
        raise ValueError("bootstrap needs at least two samples")
    mu = float(boot.mean())
    var = max(float(boot.var()), VARIANCE_FLOOR)
    n = history
    d = window - mu
    post_mean = mu + d / (n + 1)
    post_var = np.maximum(var * n / (n + 1) + d * d * n / (n + 1) ** 2, VARIANCE_FLOOR)
    surprise = kl_gaussian_1d(mu, var, post_mean, post_var)
    hits = np.flatnonzero(surprise >= threshold)
    if hits.size:
        return int(hits[0])
    return int(np.argmax(surprise))


class SurpriseDetector:
    """Streaming windowed-surprise detector for one channel.

    Each non-overlapping w-sample window is scored by the surprise its power
    spectrum causes in a diagonal Gaussian fitted to the last n quiet
    spectra. A flagged window is searched sample by sample, together with
    the quiet window before it (an onset late in a window may only trip the
    test one window on); the 1-d prior comes from the quiet window preceding
    the search. Flagged and refractory windows never enter the model.
    """

    method = DetectionMethod.SURPRISE

    def __init__(self, params: DetectorParams, channel: int = 0, start_index: int = 0):
        self.params = params
        self.channel = channel
        self.start_index = start_index
        self._spectra: list[np.ndarray] = []
        self._quiet: list[int] = []  # last two window numbers that updated the model
        self._next_window = 0
        self._resume = start_index
        self._buffer = np.zeros(0)
        self._buffer_window = 0  # window number of _buffer[0]

    def _window(self, k: int) -> np.ndarray:
        w = self.params.window_w
        lo = (k - self._buffer_window) * w
        return self._buffer[lo:lo + w]

    def process(self, samples) -> list[Detection]:
        p = self.params
        w, n = p.window_w, p.history_n
        self._buffer = np.concatenate([self._buffer, np.asarray(samples, dtype=float)])
        detections = []
        while (self._next_window + 1 - self._buffer_window) * w <= self._buffer.size:
            k = self._next_window
            self._next_window += 1
            start = self.start_index + k * w
            if start < self._resume:
                continue
            window = self._window(k)
            spectrum = power_spectrum(window, p.taper)
            if len(self._spectra) < n:
                self._accept(k, spectrum)
                continue
            prior = SpectralModel.fit(self._spectra)
            score = kl_gaussian(prior, prior.fold(spectrum))
            if score < p.threshold:
                self._accept(k, spectrum)
                continue
            if self._quiet[-1] == k - 1:
                first, boot = k - 1, self._quiet[-2]
            else:
                first, boot = k, self._quiet[-1]
            lo = (first - self._buffer_window) * w
            span = self._buffer[lo:(k + 1 - self._buffer_window) * w]
            local = refine_time(span, self._window(boot), p.refine_threshold, n)
            index = self.start_index + first * w + local
            detections.append(Detection(index, self.channel, score, self.method))
            self._resume = max(index + max(p.refractory, 1), start + w)
        self._trim()
        return detections

    def _accept(self, k: int, spectrum: np.ndarray) -> None:
        self._spectra.append(spectrum)
        if len(self._spectra) > self.params.history_n:
            del self._spectra[0]
        self._quiet = (self._quiet + [k])[-2:]

    def _trim(self) -> None:
        keep_from = min(self._quiet[:1] + [self._next_window])
        drop = keep_from - self._buffer_window
        if drop > 0:
            self._buffer = self._buffer[drop * self.params.window_w:]
            self._buffer_window = keep_from


def detect_surprise(channel_stream, params: DetectorParams, channel: int = 0,
                    offset: int = 0) -> list[Detection]:
    """Windowed Gaussian-surprise detector with time-domain refinement."""
    x = np.asarray(channel_stream, dtype=float)
    w, n = params.window_w, params.history_n
    if x.size < (n + 2) * w:
        raise WarmupError(f"surprise detector needs at least {(n + 2) * w} samples, got {x.size}")
    return SurpriseDetector(params, channel, offset).process(x)


def make_detector(method: DetectionMethod | str, params: DetectorParams, channel: int = 0,
                  start_index: int = 0):
    if DetectionMethod(method) is DetectionMethod.SURPRISE:
        return SurpriseDetector(params, channel, start_index)
    return GaussianDetector(params, channel, start_index)


def detect(channel_stream, params: DetectorParams, method: DetectionMethod | str,
           channel: int = 0, offset: int = 0) -> list[Detection]:
    method = DetectionMethod(method)
    if method is DetectionMethod.SURPRISE:
        return detect_surprise(channel_stream, params, channel, offset)
    return detect_gaussian(channel_stream, params, channel, offset)


def detect_channels(samples, params: DetectorParams, method: DetectionMethod | str,
                    workers: int = 1, channels: Sequence[int] | None = None,
                    offset: int = 0) -> list[list[Detection]]:
    """Run the detector on every channel of a (channels, n) array.

    Channels are independent, so ``workers > 1`` fans them out to a thread
    pool; the result is the same as a serial run.
    """
    samples = np.atleast_2d(samples)
    chans = list(range(samples.shape[0])) if channels is None else list(channels)
    if workers <= 1:
        return [detect(samples[c], params, method, c, offset) for c in chans]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(detect, samples[c], params, method, c, offset) for c in chans]
        return [f.result() for f in futures]


@dataclass
class DetectorEvaluation:
    tp: int
    fp: int
    fn: int
    fdr: float
    fnr: float
    errors: list[int]
    fdr_degenerate: bool = False
    fnr_degenerate: bool = False
    matches: list[tuple[int, int]] = field(default_factory=list)


def _truth_index(item) -> int:
    return int(getattr(item, "sample_index", item))


def _is_false_event(item) -> bool:
    label = getattr(item, "label", None)
    return getattr(label, "value", label) == "false_event"


def evaluate_detector(detections: Iterable, truth: Iterable, tolerance: int) -> DetectorEvaluation:
    """FDR/FNR of detections against reference timestamps.

    Detections and truths are paired one-to-one, nearest pairs first, when
    they are at most ``tolerance`` samples apart. Truth items labelled
    ``false_event`` are not impact events; detections near them count as
    false positives. ``errors`` holds detector minus reference, in truth order.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    det = [_truth_index(d) for d in detections]
    ref = [_truth_index(t) for t in truth if not _is_false_event(t)]

    order = sorted(range(len(ref)), key=ref.__getitem__)
    ref_sorted = [ref[j] for j in order]
    pairs = []
    for i, d in enumerate(det):
        lo = bisect.bisect_left(ref_sorted, d - tolerance)
        hi = bisect.bisect_right(ref_sorted, d + tolerance)
        for pos in range(lo, hi):
            j = order[pos]
            pairs.append((abs(d - ref[j]), j, i))
    pairs.sort()
    used_det: set[int] = set()
    used_ref: set[int] = set()
    matches = []
    for _, j, i in pairs:
        if i in used_det or j in used_ref:
            continue
        used_det.add(i)
        used_ref.add(j)
        matches.append((i, j))
    matches.sort(key=lambda m: m[1])

    tp = len(matches)
    fp = len(det) - tp
    fn = len(ref) - tp
    fdr_degenerate = tp + fp == 0
    fnr_degenerate = tp + fn == 0
    return DetectorEvaluation(
        tp=tp,
        fp=fp,
        fn=fn,
        fdr=0.0 if fdr_degenerate else fp / (tp + fp),
        fnr=0.0 if fnr_degenerate else fn / (fn + tp),
        errors=[det[i] - ref[j] for i, j in matches],
        fdr_degenerate=fdr_degenerate,
        fnr_degenerate=fnr_degenerate,
        matches=matches,
    )


def rates_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float]:
    fdr = fp / (tp + fp) if tp + fp else 0.0
    fnr = fn / (fn + tp) if fn + tp else 0.0
    return fdr, fnr
