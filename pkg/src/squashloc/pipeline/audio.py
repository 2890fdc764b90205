"""WAV ingestion and writing."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.io import wavfile

from squashloc.signal import AudioBlock


class IngestionError(ValueError):
    """Audio does not match the configuration; ``field`` names the mismatch."""

    def __init__(self, message: str, field: str):
        super().__init__(message)
        self.field = field


def _normalize(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.int16:
        return data / 32768.0
    if data.dtype == np.int32:
        # scipy left-aligns 24-bit PCM in int32
        return data / 2147483648.0
    if data.dtype == np.uint8:
        return (data.astype(float) - 128.0) / 128.0
    if data.dtype.kind == "f":
        return np.clip(data.astype(float), -1.0, 1.0)
    raise IngestionError(f"unsupported sample format {data.dtype}", "format")


def read_wav(path: str | Path) -> tuple[float, np.ndarray]:
    """Sample rate and a (channels, n) array scaled to [-1, 1]."""
    try:
        rate, data = wavfile.read(str(path))
    except (OSError, ValueError) as exc:
        raise IngestionError(f"{path}: {exc}", "file") from exc
    samples = _normalize(np.asarray(data))
    if samples.ndim == 1:
        samples = samples[None, :]
    else:
        samples = samples.T
    return float(rate), np.ascontiguousarray(samples)


def ingest(paths: str | Path | Sequence[str | Path], sample_rate: float | None = None,
           channels: int | None = None, channel_map: Sequence[int] | None = None) -> AudioBlock:
    """Load one multichannel WAV or several mono WAVs of identical rate and length.

    ``channel_map[i]`` names the file channel feeding array channel ``i``.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    paths = list(paths)
    if not paths:
        raise IngestionError("no input files given", "input")
    rates, parts = zip(*(read_wav(p) for p in paths))
    if len(set(rates)) != 1:
        raise IngestionError(f"sample rates differ between files: {sorted(set(rates))}", "sample_rate")
    lengths = {p.shape[1] for p in parts}
    if len(lengths) != 1:
        raise IngestionError(f"file lengths differ: {sorted(lengths)}", "length")
    samples = np.concatenate(parts, axis=0)
    rate = rates[0]
    if channel_map is not None:
        if sorted(channel_map) != sorted(set(channel_map)) or max(channel_map) >= samples.shape[0]:
            raise IngestionError(f"invalid channel_map {list(channel_map)}", "channel_map")
        samples = samples[list(channel_map)]
    if sample_rate is not None and rate != float(sample_rate):
        raise IngestionError(f"file rate {rate:g} Hz, configured {float(sample_rate):g} Hz", "sample_rate")
    if channels is not None and samples.shape[0] != channels:
        raise IngestionError(f"file has {samples.shape[0]} channels, configured {channels}", "channels")
    return AudioBlock(rate, samples)


def write_wav(path: str | Path, block: AudioBlock, sample_format: str = "float32") -> Path:
    """Write (channels, n) samples; ``sample_format`` is float32, int16 or int32."""
    data = block.samples.T
    if sample_format == "float32":
        out = data.astype(np.float32)
    elif sample_format == "int16":
        out = np.clip(np.round(data * 32768.0), -32768, 32767).astype(np.int16)
    elif sample_format == "int32":
        out = np.clip(np.round(data * 2147483648.0), -2147483648, 2147483647).astype(np.int32)
    else:
        raise ValueError(f"unknown sample format {sample_format!r}")
    wavfile.write(str(path), int(block.sample_rate), out)
    return Path(path)
