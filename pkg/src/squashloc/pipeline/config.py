"""Pipeline configuration: a strict JSON document mapped onto dataclasses.

Every section is optional and falls back to the defaults below; unknown
keys anywhere are rejected.

    {
      "geometry":   {"width": 6.4, "depth": 9.75, "height": 4.57},
      "array":      {"speed_of_sound": 343.0, "sample_rate": 96000,
                     "mics": [{"id": 0, "position": [x, y, z],
                               "kind": "omnidirectional", "sigma_samples": 10}, ...]},
      "detector":   {"method": "gaussian_threshold", "threshold": 8.0, "window_w": 256,
                     "history_n": 32, "refractory": 4800, "welford_capacity": 9600,
                     "refine_threshold": 0.15, "taper": "hann"},
      "matcher":    {"max_spread": null, "min_channels": 4, "plane_min_channels": 3},
      "localizer":  {"max_iters": 100, "tol": 1e-8, "min_step": 1e-6},
      "classifier": {"bundle": null, "oracle_labels": null, "oracle_tolerance": 480,
                     "feature_half_width": 300},
      "io":         {"input": "match.wav", "output": "events.jsonl",
                     "channel_map": null, "block_size": 96000},
      "workers": 1
    }

``input`` is a multichannel WAV or a list of mono WAVs. A null
``max_spread`` means the court diagonal's travel time in samples. Relative
paths resolve against the config file's directory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from squashloc.detect import DetectionMethod, DetectorParams
from squashloc.geometry import CourtGeometry, MicArray, Microphone, default_array
from squashloc.localize import LocalizerOptions


class ConfigError(ValueError):
    pass


def _check_keys(section: str, data: Any, allowed) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected an object")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"{section}: unknown keys {unknown}")
    return data


@dataclass(frozen=True)
class MatcherConfig:
    max_spread: int
    min_channels: int = 4
    plane_min_channels: int = 3


@dataclass(frozen=True)
class ClassifierConfig:
    bundle: Path | None = None
    oracle_labels: Path | None = None
    oracle_tolerance: int = 480
    feature_half_width: int = 300


@dataclass(frozen=True)
class IOConfig:
    input: tuple[Path, ...] = ()
    output: Path | None = None
    channel_map: tuple[int, ...] | None = None
    block_size: int = 96000


@dataclass(frozen=True)
class PipelineConfig:
    geometry: CourtGeometry = field(default_factory=CourtGeometry)
    array: MicArray = field(default_factory=default_array)
    method: DetectionMethod = DetectionMethod.GAUSSIAN_THRESHOLD
    detector: DetectorParams = field(default_factory=DetectorParams)
    matcher: MatcherConfig | None = None
    localizer: LocalizerOptions = field(default_factory=LocalizerOptions)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    io: IOConfig = field(default_factory=IOConfig)
    workers: int = 1

    def __post_init__(self) -> None:
        if self.matcher is None:
            object.__setattr__(self, "matcher", MatcherConfig(self.default_max_spread()))
        if self.matcher.max_spread < self.physical_spread():
            raise ConfigError(
                f"matcher.max_spread={self.matcher.max_spread} is below the physical bound "
                f"{self.physical_spread():.1f} samples"
            )
        if self.matcher.plane_min_channels < 3 or self.matcher.min_channels < 4:
            raise ConfigError("min_channels must be >= 4 and plane_min_channels >= 3")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.array.check_inside(self.geometry)

    def physical_spread(self) -> float:
        return self.geometry.diagonal / self.array.speed_of_sound * self.array.sample_rate

    def default_max_spread(self) -> int:
        return int(math.ceil(self.physical_spread()))


def _paths(value, base: Path) -> tuple[Path, ...]:
    if value is None:
        return ()
    items = value if isinstance(value, list) else [value]
    return tuple((base / p) if not Path(p).is_absolute() else Path(p) for p in items)


def _array(data: dict, court: CourtGeometry) -> MicArray:
    data = _check_keys("array", data, {"speed_of_sound", "sample_rate", "mics"})
    c = float(data.get("speed_of_sound", 343.0))
    fs = float(data.get("sample_rate", 96000.0))
    if "mics" not in data:
        return default_array(court, c, fs)
    mics = []
    for i, m in enumerate(data["mics"]):
        m = _check_keys(f"array.mics[{i}]", m, {"id", "position", "kind", "sigma_samples"})
        sigma = float(m.get("sigma_samples", 10.0)) / fs
        mics.append(Microphone(int(m.get("id", i)), m["position"], m.get("kind", "omnidirectional"), sigma))
    return MicArray(tuple(mics), c, fs)


def config_from_dict(data: dict, base: str | Path = ".") -> PipelineConfig:
    base = Path(base)
    top = {"geometry", "array", "detector", "matcher", "localizer", "classifier", "io", "workers"}
    data = _check_keys("config", data, top)
    try:
        g = _check_keys("geometry", data.get("geometry", {}), {"width", "depth", "height"})
        court = CourtGeometry(**{k: float(v) for k, v in g.items()})
        array = _array(data.get("array", {}), court)

        det_keys = {f.name for f in fields(DetectorParams)} | {"method"}
        det = dict(_check_keys("detector", data.get("detector", {}), det_keys))
        method = DetectionMethod(det.pop("method", DetectionMethod.GAUSSIAN_THRESHOLD))
        detector = DetectorParams.for_method(method, **det)

        m = _check_keys("matcher", data.get("matcher", {}), {"max_spread", "min_channels", "plane_min_channels"})
        loc = _check_keys("localizer", data.get("localizer", {}), {"max_iters", "tol", "min_step"})
        cls = _check_keys("classifier", data.get("classifier", {}),
                          {"bundle", "oracle_labels", "oracle_tolerance", "feature_half_width"})
        io = _check_keys("io", data.get("io", {}), {"input", "output", "channel_map", "block_size"})

        classifier = ClassifierConfig(
            bundle=_paths(cls.get("bundle"), base)[0] if cls.get("bundle") else None,
            oracle_labels=_paths(cls.get("oracle_labels"), base)[0] if cls.get("oracle_labels") else None,
            oracle_tolerance=int(cls.get("oracle_tolerance", 480)),
            feature_half_width=int(cls.get("feature_half_width", 300)),
        )
        io_cfg = IOConfig(
            input=_paths(io.get("input"), base),
            output=_paths(io.get("output"), base)[0] if io.get("output") else None,
            channel_map=tuple(io["channel_map"]) if io.get("channel_map") is not None else None,
            block_size=int(io.get("block_size", 96000)),
        )
        cfg = PipelineConfig(
            geometry=court,
            array=array,
            method=method,
            detector=detector,
            localizer=LocalizerOptions(**loc),
            classifier=classifier,
            io=io_cfg,
            workers=int(data.get("workers", 1)),
        )
        if m:
            spread = m.get("max_spread")
            matcher = MatcherConfig(
                max_spread=cfg.default_max_spread() if spread is None else int(spread),
                min_channels=int(m.get("min_channels", 4)),
                plane_min_channels=int(m.get("plane_min_channels", 3)),
            )
            cfg = PipelineConfig(**{**{f.name: getattr(cfg, f.name) for f in fields(cfg)}, "matcher": matcher})
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(data, path.parent)
