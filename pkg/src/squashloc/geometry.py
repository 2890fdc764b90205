"""Court coordinate frame, microphone array and the named court surfaces.

Frame: origin at the corner where the front wall, the floor and the left
wall meet; x runs along the front wall, y toward the back glass, z up.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SURFACE_NAMES = ("front_wall", "floor", "left_wall", "right_wall", "back_glass")


class GeometryError(ValueError):
    """Invalid court or array description."""


def _vec3(value) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise GeometryError(f"expected a finite 3-vector, got {value!r}")
    return arr


@dataclass(frozen=True)
class NamedPlane:
    name: str
    point: np.ndarray
    unit_normal: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "point", _vec3(self.point))
        normal = _vec3(self.unit_normal)
        if abs(np.linalg.norm(normal) - 1.0) > 1e-12:
            raise GeometryError(f"plane {self.name!r}: normal is not unit length")
        object.__setattr__(self, "unit_normal", normal)

    def project(self, pos) -> np.ndarray:
        """Orthogonal projection of ``pos`` onto the plane."""
        pos = np.asarray(pos, dtype=float)
        return pos - plane_offset(pos, self)[..., None] * self.unit_normal

    def basis(self) -> tuple[np.ndarray, np.ndarray]:
        """Two orthonormal in-plane directions."""
        n = self.unit_normal
        helper = np.eye(3)[int(np.argmin(np.abs(n)))]
        u = np.cross(n, helper)
        u /= np.linalg.norm(u)
        return u, np.cross(n, u)


@dataclass(frozen=True)
class CourtGeometry:
    width: float = 6.4
    depth: float = 9.75
    height: float = 4.57
    surfaces: tuple[NamedPlane, ...] = field(default=())

    def __post_init__(self) -> None:
        if min(self.width, self.depth, self.height) <= 0:
            raise GeometryError("court dimensions must be positive")
        if not self.surfaces:
            object.__setattr__(self, "surfaces", self._box_surfaces())
        names = [s.name for s in self.surfaces]
        for name in SURFACE_NAMES:
            if names.count(name) != 1:
                raise GeometryError(f"court needs exactly one surface named {name!r}")

    def _box_surfaces(self) -> tuple[NamedPlane, ...]:
        w, d = self.width, self.depth
        # normals point into the court
        return (
            NamedPlane("front_wall", (0.0, 0.0, 0.0), (0.0, 1.0, 0.0)),
            NamedPlane("floor", (0.0, 0.0, 0.0), (0.0, 0.0, 1.0)),
            NamedPlane("left_wall", (0.0, 0.0, 0.0), (1.0, 0.0, 0.0)),
            NamedPlane("right_wall", (w, 0.0, 0.0), (-1.0, 0.0, 0.0)),
            NamedPlane("back_glass", (0.0, d, 0.0), (0.0, -1.0, 0.0)),
        )

    @property
    def extent(self) -> np.ndarray:
        return np.array([self.width, self.depth, self.height])

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    @property
    def centroid(self) -> np.ndarray:
        return self.extent / 2.0

    def surface(self, name: str) -> NamedPlane:
        for plane in self.surfaces:
            if plane.name == name:
                return plane
        raise KeyError(name)

    def surface_centroid(self, name: str) -> np.ndarray:
        """Centre of the court face lying in the named plane."""
        return self.surface(name).project(self.centroid)

    def contains(self, pos, margin: float = 0.0) -> bool:
        pos = np.asarray(pos, dtype=float)
        return bool(np.all(pos >= -margin) and np.all(pos <= self.extent + margin))


class MicKind(str, Enum):
    OMNIDIRECTIONAL = "omnidirectional"
    CARDIOID = "cardioid"


@dataclass(frozen=True)
class Microphone:
    id: int
    position: np.ndarray
    kind: MicKind = MicKind.OMNIDIRECTIONAL
    sigma: float = 10.0 / 96000.0  # detection-time uncertainty, seconds

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _vec3(self.position))
        object.__setattr__(self, "kind", MicKind(self.kind))
        if not self.sigma > 0:
            raise GeometryError(f"microphone {self.id}: sigma must be positive")


@dataclass(frozen=True)
class MicArray:
    mics: tuple[Microphone, ...]
    speed_of_sound: float = 343.0
    sample_rate: float = 96000.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "mics", tuple(self.mics))
        if self.speed_of_sound <= 0 or self.sample_rate <= 0:
            raise GeometryError("speed_of_sound and sample_rate must be positive")
        if len(self.mics) < 3:
            raise GeometryError("an array needs at least 3 microphones")
        ids = [m.id for m in self.mics]
        if ids != list(range(len(ids))):
            raise GeometryError(f"channel ids must be 0..N in order, got {ids}")

    def __len__(self) -> int:
        return len(self.mics)

    @property
    def positions(self) -> np.ndarray:
        """(N, 3) microphone positions."""
        return np.stack([m.position for m in self.mics])

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([m.sigma for m in self.mics])

    def check_inside(self, court: CourtGeometry) -> None:
        for mic in self.mics:
            if not court.contains(mic.position, margin=1e-9):
                raise GeometryError(f"microphone {mic.id} lies outside the court")


def default_array(
    court: CourtGeometry | None = None,
    speed_of_sound: float = 343.0,
    sample_rate: float = 96000.0,
    sigma_samples: float = 10.0,
) -> MicArray:
    """Six-microphone layout: three omni mics in the floor, three cardioids overhead.

    Floor and ceiling triangles are mirrored across the court's long axis;
    among corner/mid-edge placements this minimises the median position
    error bound over the court volume.
    """
    court = court or CourtGeometry()
    w, d, h = court.width, court.depth, court.height
    inset = 0.25
    top_z = h - 0.07
    layout = [
        ((inset, d / 2, 0.0), MicKind.OMNIDIRECTIONAL),
        ((w - inset, inset, 0.0), MicKind.OMNIDIRECTIONAL),
        ((w - inset, d - inset, 0.0), MicKind.OMNIDIRECTIONAL),
        ((inset, inset, top_z), MicKind.CARDIOID),
        ((inset, d - inset, top_z), MicKind.CARDIOID),
        ((w - inset, d / 2, top_z), MicKind.CARDIOID),
    ]
    sigma = sigma_samples / sample_rate
    mics = tuple(Microphone(i, pos, kind, sigma) for i, (pos, kind) in enumerate(layout))
    array = MicArray(mics, speed_of_sound, sample_rate)
    array.check_inside(court)
    return array


def distance(pos, mic: Microphone) -> float:
    return float(np.linalg.norm(np.asarray(pos, dtype=float) - mic.position))


def plane_offset(pos, plane: NamedPlane):
    """Signed distance of ``pos`` from ``plane``; positive on the normal side.

    Accepts a single point or an (..., 3) array of points.
    """
    return (np.asarray(pos, dtype=float) - plane.point) @ plane.unit_normal
