"""Sample-stream primitives shared by the detectors and the spectral features."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

VARIANCE_FLOOR = 1e-12


class InvalidWindowError(ValueError):
    pass


@dataclass
class AudioBlock:
    """Synchronised multichannel samples, shape (channels, n)."""

    sample_rate: float
    samples: np.ndarray
    start_index: int = 0

    def __post_init__(self) -> None:
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0:
            raise ValueError("amplitudes must lie in [-1, 1]")

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[1]


@dataclass
class RunningStats:
    """Welford mean/variance over the most recent ``capacity`` samples.

    With ``capacity=None`` every sample is retained (plain Welford).
    """

    capacity: int | None = None
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    _window: deque = field(default_factory=deque, repr=False)

    def update(self, x: float) -> "RunningStats":
        x = float(x)
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)
        if self.capacity is not None:
            self._window.append(x)
            if self.count > self.capacity:
                self._evict(self._window.popleft())
        return self

    def _evict(self, old: float) -> None:
        # inverse of the Welford step
        n = self.count - 1
        mean_without = (self.count * self.mean - old) / n
        self.m2 -= (old - mean_without) * (old - self.mean)
        self.mean = mean_without
        self.count = n
        if self.m2 < 0.0:
            self.m2 = 0.0

    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    def std(self) -> float:
        return float(np.sqrt(self.variance()))

    def retained(self) -> np.ndarray:
        return np.fromiter(self._window, dtype=float, count=len(self._window))


def welford_update(stats: RunningStats, x: float) -> RunningStats:
    return stats.update(x)


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def power_spectrum(window, taper: str = "hann") -> np.ndarray:
    """|DFT|^2 of a (tapered) window whose length is a power of two.

    With ``taper="none"`` Parseval holds: ``sum(x**2) == sum(P) / len(x)``.
    """
    x = np.asarray(window, dtype=float)
    if x.ndim != 1 or not _is_power_of_two(x.size):
        raise InvalidWindowError(f"window length must be a power of two, got {x.shape}")
    if taper == "hann":
        x = x * np.hanning(x.size)
    elif taper != "none":
        raise ValueError(f"unknown taper {taper!r}")
    spec = np.fft.fft(x)
    return spec.real**2 + spec.imag**2


@dataclass
class SpectralModel:
    """Diagonal Gaussian over w-dimensional observations."""

    mean: np.ndarray
    variance: np.ndarray
    history: int

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float)
        self.variance = np.maximum(np.asarray(self.variance, dtype=float), VARIANCE_FLOOR)
        if self.mean.shape != self.variance.shape:
            raise ValueError("mean and variance shapes differ")

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def fit(cls, observations) -> "SpectralModel":
        """Population mean/variance of an (n, w) stack of observations."""
        obs = np.atleast_2d(np.asarray(observations, dtype=float))
        return cls(obs.mean(axis=0), obs.var(axis=0), obs.shape[0])

    def fold(self, observation) -> "SpectralModel":
        """Posterior after adding one observation at weight 1/(n+1)."""
        x = np.asarray(observation, dtype=float)
        n = self.history
        d = x - self.mean
        mean = self.mean + d / (n + 1)
        var = self.variance * n / (n + 1) + d * d * n / (n + 1) ** 2
        return SpectralModel(mean, var, n + 1)


def kl_gaussian(prior: SpectralModel, posterior: SpectralModel) -> float:
    """Surprise of ``posterior`` relative to ``prior`` for diagonal Gaussians.

    S = 1/2 * sum_j [ log(v_j / v'_j) + v'_j / v_j - 1 + (mu'_j - mu_j)^2 / v_j ]
    """
    if prior.dim != posterior.dim:
        raise ValueError(f"dimension mismatch: {prior.dim} vs {posterior.dim}")
    v, vp = prior.variance, posterior.variance
    ratio = vp / v
    dm = posterior.mean - prior.mean
    terms = ratio - np.log(ratio) - 1.0 + dm * dm / v
    return max(0.5 * float(terms.sum()), 0.0)


def kl_gaussian_1d(mean: float, var: float, post_mean: float, post_var: float) -> float:
    ratio = post_var / var
    dm = post_mean - mean
    return 0.5 * (ratio - np.log(ratio) - 1.0 + dm * dm / var)
