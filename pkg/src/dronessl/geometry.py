"""Array geometry, far-field delays, steering vectors and direction grids.

Convention: azimuth is measured counterclockwise from +x seen from +z,
elevation is positive upward, both in degrees. The unit vector of
(az, el) is (cos el cos az, cos el sin az, sin el).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, InvalidMicIndex, InvalidStep

SPEED_OF_SOUND = 343.0  # m/s, dry air at 20 degrees C
DEFAULT_CUBE_EDGE = 0.10  # m; stand-in, the real array geometry ships with the data


def _wrap_azimuth(az):
    return (np.asarray(az, dtype=np.float64) + 180.0) % 360.0 - 180.0


@dataclass(frozen=True)
class Direction:
    """A point on the unit sphere as (azimuth, elevation) in degrees.

    Azimuth is wrapped into [-180, 180); elevation must lie in [-90, 90].
    """

    azimuth: float
    elevation: float

    def __post_init__(self):
        az, el = float(self.azimuth), float(self.elevation)
        if not (np.isfinite(az) and np.isfinite(el)):
            raise ValueError(f"direction must be finite, got ({az}, {el})")
        if not -90.0 <= el <= 90.0:
            raise ValueError(f"elevation {el} outside [-90, 90]")
        az = float(_wrap_azimuth(az))
        if az >= 180.0:  # float wrap can land exactly on the open end
            az -= 360.0
        object.__setattr__(self, "azimuth", az)
        object.__setattr__(self, "elevation", el)

    @property
    def vector(self) -> np.ndarray:
        return unit_vector(self.azimuth, self.elevation)

    @classmethod
    def from_vector(cls, v) -> "Direction":
        az, el = vector_to_angles(np.asarray(v, dtype=np.float64))
        return cls(float(az), float(el))


def unit_vector(azimuth, elevation) -> np.ndarray:
    """Unit vectors for (arrays of) angles in degrees; last axis has length 3."""
    az = np.deg2rad(np.asarray(azimuth, dtype=np.float64))
    el = np.deg2rad(np.asarray(elevation, dtype=np.float64))
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


def vector_to_angles(v):
    """Inverse of :func:`unit_vector`; input need not be normalized."""
    v = np.asarray(v, dtype=np.float64)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    az = np.rad2deg(np.arctan2(y, x))
    el = np.rad2deg(np.arctan2(z, np.hypot(x, y)))
    az = _wrap_azimuth(az)
    return az, np.clip(el, -90.0, 90.0)


def angle_between(u, v) -> np.ndarray:
    """Angle in degrees between (arrays of) vectors, via atan2(|u x v|, u.v)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    cross = np.linalg.norm(np.cross(u, v), axis=-1)
    dot = np.sum(u * v, axis=-1)
    return np.rad2deg(np.arctan2(cross, dot))


def great_circle_distance(a: Direction, b: Direction) -> float:
    """Great-circle distance in degrees, in [0, 180]."""
    return float(angle_between(a.vector, b.vector))


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    mic_positions: np.ndarray  # (M, 3), meters
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        pos = np.asarray(self.mic_positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise InvalidConfig(f"mic positions must be (M, 3), got {pos.shape}")
        if pos.shape[0] < 2:
            raise InvalidConfig("an array needs at least 2 microphones")
        if not np.all(np.isfinite(pos)):
            raise InvalidConfig("mic positions must be finite")
        d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        if np.any(d[np.triu_indices(len(pos), 1)] == 0):
            raise InvalidConfig("mic positions must be distinct")
        if not self.speed_of_sound > 0:
            raise InvalidConfig("speed of sound must be positive")
        pos.setflags(write=False)
        object.__setattr__(self, "mic_positions", pos)
        object.__setattr__(self, "speed_of_sound", float(self.speed_of_sound))

    @property
    def n_mics(self) -> int:
        return self.mic_positions.shape[0]

    def pairs(self) -> list[tuple[int, int]]:
        return list(itertools.combinations(range(self.n_mics), 2))

    def pair_distance(self, i: int, j: int) -> float:
        return float(np.linalg.norm(self.mic_positions[i] - self.mic_positions[j]))

    def delays(self, vectors) -> np.ndarray:
        """Arrival delay of every mic relative to the array origin, shape (..., M).

        A plane wave from unit direction u reaches mic m at -u.m / c.
        """
        return -np.asarray(vectors) @ self.mic_positions.T / self.speed_of_sound


def cube_array(edge: float = DEFAULT_CUBE_EDGE, speed_of_sound: float = SPEED_OF_SOUND) -> ArrayGeometry:
    """Eight microphones at the corners of a cube centered on the origin."""
    h = edge / 2.0
    corners = np.array(list(itertools.product((-h, h), repeat=3)))
    return ArrayGeometry(corners, speed_of_sound)


def _check_index(geom: ArrayGeometry, k: int) -> None:
    if not (isinstance(k, (int, np.integer)) and 0 <= k < geom.n_mics):
        raise InvalidMicIndex(f"mic index {k!r} out of range 0..{geom.n_mics - 1}")


def tdoa(direction: Direction, geom: ArrayGeometry, i: int, j: int) -> float:
    """Far-field delay of mic ``j`` relative to mic ``i``, in seconds."""
    _check_index(geom, i)
    _check_index(geom, j)
    if i == j:
        raise InvalidMicIndex("tdoa needs two distinct microphones")
    u = direction.vector
    return float(u @ (geom.mic_positions[i] - geom.mic_positions[j]) / geom.speed_of_sound)


def pair_tdoas(vectors, geom: ArrayGeometry, pairs) -> np.ndarray:
    """Vectorized tdoa for many directions and pairs, shape (G, P)."""
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    baselines = geom.mic_positions[pairs[:, 0]] - geom.mic_positions[pairs[:, 1]]
    return np.asarray(vectors) @ baselines.T / geom.speed_of_sound


def steering_vector(direction: Direction, geom: ArrayGeometry, freq: float) -> np.ndarray:
    """exp(-2j pi f tau_0k) per mic, mic 0 being the phase reference."""
    if freq < 0:
        raise ValueError("frequency must be non-negative")
    return steering_matrix(direction.vector[None, :], geom, np.array([freq]))[0, 0]


def steering_matrix(vectors, geom: ArrayGeometry, freqs) -> np.ndarray:
    """Steering vectors for many directions and frequencies, shape (F, G, M)."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    tau = vectors @ (geom.mic_positions[0] - geom.mic_positions).T / geom.speed_of_sound  # (G, M)
    freqs = np.asarray(freqs, dtype=np.float64)
    return np.exp(-2j * np.pi * freqs[:, None, None] * tau[None, :, :])


@dataclass(frozen=True, eq=False)
class DirectionGrid:
    """Candidate directions, ordered elevation-outer / azimuth-inner."""

    azimuths: np.ndarray
    elevations: np.ndarray
    az_step: float
    el_step: float

    def __post_init__(self):
        az = np.asarray(self.azimuths, dtype=np.float64)
        el = np.asarray(self.elevations, dtype=np.float64)
        if az.shape != el.shape or az.ndim != 1:
            raise InvalidConfig("grid azimuths/elevations must be equal-length 1-D arrays")
        object.__setattr__(self, "azimuths", az)
        object.__setattr__(self, "elevations", el)
        object.__setattr__(self, "vectors", unit_vector(az, el))

    def __len__(self) -> int:
        return len(self.azimuths)

    def __getitem__(self, k) -> Direction:
        return Direction(self.azimuths[k], self.elevations[k])

    @property
    def directions(self) -> list[Direction]:
        return [Direction(a, e) for a, e in zip(self.azimuths, self.elevations)]

    def subset(self, mask) -> "DirectionGrid":
        """Grid restricted to a boolean mask or index array (order preserved)."""
        idx = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask)
        return DirectionGrid(self.azimuths[idx], self.elevations[idx], self.az_step, self.el_step)

    def within(self, center: Direction, radius: float) -> np.ndarray:
        """Boolean mask of grid points within ``radius`` degrees of ``center``."""
        return angle_between(self.vectors, center.vector) <= radius + 1e-9

    def nearest(self, direction: Direction) -> int:
        return int(np.argmin(angle_between(self.vectors, direction.vector)))


def _steps(span: float, step: float) -> int:
    n = span / step
    k = int(round(n))
    if k < 1 or abs(n - k) > 1e-9 * max(1.0, n):
        raise InvalidStep(f"step {step} does not divide span {span}")
    return k


def build_grid(az_step: float = 5.0, el_step: float = 5.0,
               el_range: tuple[float, float] = (-90.0, 90.0)) -> DirectionGrid:
    """Regular (azimuth, elevation) grid covering all azimuths.

    Size is (360 / az_step) * (span / el_step + 1). At el = +-90 every azimuth
    maps to the same physical point; those entries are kept so the layout stays
    rectangular.
    """
    if not (az_step > 0 and el_step > 0):
        raise InvalidStep("grid steps must be positive")
    lo, hi = float(el_range[0]), float(el_range[1])
    if not -90.0 <= lo <= hi <= 90.0:
        raise InvalidStep(f"invalid elevation range {el_range}")
    n_az = _steps(360.0, az_step)
    n_el = _steps(hi - lo, el_step) + 1 if hi > lo else 1
    az = -180.0 + az_step * np.arange(n_az)
    el = np.minimum(lo + el_step * np.arange(n_el), hi)
    ee, aa = np.meshgrid(el, az, indexing="ij")
    return DirectionGrid(aa.ravel(), ee.ravel(), float(az_step), float(el_step))


def random_directions(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` unit vectors uniform on the sphere."""
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def rotate_towards(u, target, angle_deg: float) -> np.ndarray:
    """Move unit vector ``u`` along the geodesic towards ``target`` by ``angle_deg``."""
    u = np.asarray(u, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    tangent = t - (u @ t) * u
    norm = np.linalg.norm(tangent)
    if norm < 1e-15:
        return u.copy()
    tangent /= norm
    a = np.deg2rad(angle_deg)
    out = np.cos(a) * u + np.sin(a) * tangent
    return out / np.linalg.norm(out)


def slerp(u, v, frac: float) -> np.ndarray:
    """Spherical interpolation between unit vectors ``u`` and ``v``."""
    return rotate_towards(u, v, frac * float(angle_between(u, v)))
