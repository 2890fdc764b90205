"""Synthetic court: exact propagation delays, timestamp noise and audio.

Everything downstream is validated against this forward model because the
original match recordings are not available.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from squashloc.classify.labels import ClassLabel
from squashloc.geometry import CourtGeometry, MicArray, plane_offset
from squashloc.localize import EventGroup, LocalizerOptions, localize_many
from squashloc.signal import AudioBlock

IMPACT_DECAY_S = 3e-3
MIN_DISTANCE = 0.1
# rms of the impact template over its first decay constant
TEMPLATE_RMS = float(np.sqrt((1 - np.exp(-2.0)) / 6.0))
# surfaces a ClassLabel lands on; racquet impacts happen in mid-air
SURFACE_OF = {
    ClassLabel.FRONT_WALL: "front_wall",
    ClassLabel.FLOOR: "floor",
    ClassLabel.GLASS: "back_glass",
}
IMPACT_SURFACES = (ClassLabel.FRONT_WALL, ClassLabel.RACQUET, ClassLabel.FLOOR, ClassLabel.GLASS)


@dataclass(frozen=True)
class SyntheticEvent:
    position: np.ndarray
    time: float
    surface: ClassLabel = ClassLabel.RACQUET
    amplitude: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "surface", ClassLabel(self.surface))
        if not 0.0 < self.amplitude <= 1.0:
            raise ValueError("amplitude must lie in (0, 1]")


@dataclass(frozen=True)
class NoiseSpec:
    timestamp_sigma: float = 0.0
    waveform_snr_db: float | None = None
    seed: int = 0
    noise_floor: float = 1e-3  # background std when no SNR target applies

    def __post_init__(self) -> None:
        if self.timestamp_sigma < 0:
            raise ValueError("timestamp_sigma must be non-negative")


def arrival_samples(position, time: float, array: MicArray) -> np.ndarray:
    """Fractional arrival sample index on every channel."""
    r = np.linalg.norm(np.asarray(position, dtype=float) - array.positions, axis=-1)
    return (time + r / array.speed_of_sound) * array.sample_rate


def forward_delays(event: SyntheticEvent, array: MicArray, rounding: bool = False,
                   channels: Sequence[int] | None = None) -> EventGroup:
    arrivals = arrival_samples(event.position, event.time, array)
    if rounding:
        arrivals = np.rint(arrivals)
    chans = range(len(array)) if channels is None else channels
    return EventGroup({c: float(arrivals[c]) for c in chans})


def perturb(group: EventGroup, noise: NoiseSpec) -> EventGroup:
    """Add i.i.d. Gaussian offsets of ``timestamp_sigma`` samples per channel."""
    if noise.timestamp_sigma == 0:
        return group
    rng = np.random.default_rng(noise.seed)
    offsets = rng.normal(0.0, noise.timestamp_sigma, size=len(group))
    return EventGroup({c: s + o for (c, s), o in zip(group.detections.items(), offsets)})


def random_event(rng: np.random.Generator, court: CourtGeometry,
                 surface: ClassLabel | str = ClassLabel.RACQUET, time: float = 0.0,
                 amplitude: float = 1.0, margin: float = 0.3) -> SyntheticEvent:
    """Uniform random impact on ``surface``; racquet hits anywhere above knee height."""
    surface = ClassLabel(surface)
    lo = np.array([margin, margin, margin])
    hi = court.extent - margin
    pos = rng.uniform(lo, hi)
    if surface is ClassLabel.RACQUET:
        pos[2] = rng.uniform(0.3, min(2.5, court.height - margin))
    elif surface in SURFACE_OF:
        plane = court.surface(SURFACE_OF[surface])
        pos = plane.project(pos)
    return SyntheticEvent(pos, time, surface, amplitude)


def impact_template(sample_rate: float, rng: np.random.Generator,
                    decay_s: float = IMPACT_DECAY_S) -> np.ndarray:
    """Unit-peak click followed by exponentially decaying white noise."""
    tau = decay_s * sample_rate
    n = int(np.ceil(10 * tau))
    t = np.arange(n)
    carrier = rng.uniform(-1.0, 1.0, n)
    carrier[0] = 1.0
    return carrier * np.exp(-t / tau)


def synth_waveform(events: SyntheticEvent | Iterable[SyntheticEvent], array: MicArray,
                   duration: int, noise: NoiseSpec) -> AudioBlock:
    """Render events as they arrive at every microphone, over background noise.

    Received peak amplitude falls off as 1/distance. The overall gain puts
    the loudest arrival at 0.9 full scale. With ``waveform_snr_db`` set, the
    background level is chosen so that the weakest arrival has that SNR
    (burst power over its first decay constant against noise power).
    """
    if isinstance(events, SyntheticEvent):
        events = [events]
    events = list(events)
    rng = np.random.default_rng(noise.seed)
    n_ch = len(array)
    fs = array.sample_rate
    out = np.zeros((n_ch, duration))

    peaks = []
    onsets = []
    for ev in events:
        r = np.linalg.norm(ev.position - array.positions, axis=-1)
        peaks.append(ev.amplitude / np.maximum(r, MIN_DISTANCE))
        onsets.append(np.rint(arrival_samples(ev.position, ev.time, array)).astype(int))
    if events:
        peaks_arr = np.array(peaks)
        gain = 0.9 / peaks_arr.max()
        if np.any(np.array(onsets) < 0) or np.any(np.array(onsets) >= duration):
            raise ValueError("duration does not cover every arrival")
        for ev_peaks, ev_onsets in zip(peaks_arr, onsets):
            for ch in range(n_ch):
                burst = gain * ev_peaks[ch] * impact_template(fs, rng)
                start = ev_onsets[ch]
                stop = min(start + burst.size, duration)
                out[ch, start:stop] += burst[: stop - start]
        weakest = gain * peaks_arr.min() * TEMPLATE_RMS
    else:
        weakest = None

    if noise.waveform_snr_db is not None and weakest is not None:
        noise_std = weakest / 10 ** (noise.waveform_snr_db / 20.0)
    else:
        noise_std = noise.noise_floor
    out += rng.normal(0.0, noise_std, out.shape)
    np.clip(out, -1.0, 1.0, out=out)
    return AudioBlock(fs, out)


@dataclass
class ErrorTable:
    """Sorted localisation errors (metres) per timestamp-noise level (samples).

    Points with no admissible solution carry an infinite error.
    """

    errors: dict[float, np.ndarray]

    def percentile(self, sigma: float, q: float) -> float:
        return float(np.percentile(self.errors[sigma], q, method="inverted_cdf"))

    def median(self, sigma: float) -> float:
        return self.percentile(sigma, 50)

    def rows(self, percentiles: Iterable[float] = range(1, 101)):
        for sigma, errs in self.errors.items():
            for q in percentiles:
                yield sigma, q, self.percentile(sigma, q)

    def write(self, path: str | Path, delimiter: str = ",") -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, delimiter=delimiter)
            writer.writerow(["sigma", "percentile", "error_m"])
            for sigma, q, err in self.rows():
                writer.writerow([f"{sigma:g}", f"{q:g}", f"{err:.9g}"])


def _point_streams(seed: int, n_points: int, court: CourtGeometry, n_ch: int):
    # one generator per point so any slice of points reproduces exactly
    positions = np.empty((n_points, 3))
    unit_noise = np.empty((n_points, n_ch))
    for i in range(n_points):
        rng = np.random.default_rng([seed, i])
        positions[i] = rng.uniform(0.0, 1.0, 3) * court.extent
        unit_noise[i] = rng.standard_normal(n_ch)
    return positions, unit_noise


def error_experiment(n_points: int, sigmas: Sequence[float], array: MicArray,
                     court: CourtGeometry | None = None, seed: int = 0,
                     opts: LocalizerOptions | None = None) -> ErrorTable:
    """Localisation error over random court points for each timestamp-noise level.

    The same points and the same standard-normal draws are reused for every
    sigma, so the curves differ only in noise scale.
    """
    if n_points < 100:
        raise ValueError("n_points must be at least 100")
    court = court or CourtGeometry()
    positions, unit_noise = _point_streams(seed, n_points, court, len(array))
    arrivals = np.stack([arrival_samples(p, 0.0, array) for p in positions])
    table = {}
    for sigma in sigmas:
        estimate, _ = localize_many(arrivals + sigma * unit_noise, array, court, opts)
        err = np.linalg.norm(estimate - positions, axis=1)
        err[~np.isfinite(err)] = np.inf
        table[float(sigma)] = np.sort(err)
    return ErrorTable(table)


def plane_offset_experiment(n_events: int, sigma: float, array: MicArray,
                            court: CourtGeometry | None = None, seed: int = 0,
                            surface: str = "front_wall") -> np.ndarray:
    """Signed offsets from ``surface`` of 3-D estimates of on-surface events."""
    court = court or CourtGeometry()
    plane = court.surface(surface)
    label = {v: k for k, v in SURFACE_OF.items()}.get(surface, ClassLabel.RACQUET)
    rng = np.random.default_rng(seed)
    events = [random_event(rng, court, label) for _ in range(n_events)]
    arrivals = np.stack([arrival_samples(e.position, 0.0, array) for e in events])
    arrivals = arrivals + rng.normal(0.0, sigma, arrivals.shape)
    estimate, _ = localize_many(arrivals, array, court)
    ok = np.all(np.isfinite(estimate), axis=1)
    return plane_offset(estimate[ok], plane)


@dataclass
class Session:
    """A rendered synthetic recording and its ground truth."""

    events: list[SyntheticEvent]
    block: AudioBlock
    # (channel, rounded arrival sample, class) per event and channel
    labels: list[tuple[int, int, ClassLabel]]


def simulate_session(n_events: int, array: MicArray, court: CourtGeometry | None = None,
                     snr_db: float | None = 20.0, seed: int = 0,
                     surfaces: Sequence[ClassLabel | str] = IMPACT_SURFACES,
                     gap_s: tuple[float, float] = (0.1, 0.15), lead_s: float = 0.2) -> Session:
    """``n_events`` impacts cycling through ``surfaces``, spaced ``gap_s`` apart."""
    court = court or CourtGeometry()
    rng = np.random.default_rng(seed)
    events = []
    t = lead_s
    for i in range(n_events):
        events.append(random_event(rng, court, surfaces[i % len(surfaces)], time=t))
        t += rng.uniform(*gap_s)
    duration = int(np.ceil((t + lead_s) * array.sample_rate))
    block = synth_waveform(events, array, duration, NoiseSpec(waveform_snr_db=snr_db, seed=seed + 1))
    labels = []
    for ev in events:
        onsets = np.rint(arrival_samples(ev.position, ev.time, array)).astype(int)
        labels.extend((ch, int(s), ev.surface) for ch, s in enumerate(onsets))
    labels.sort(key=lambda l: (l[1], l[0]))
    return Session(events, block, labels)
