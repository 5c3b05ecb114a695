"""Survey and source data model, unit conventions and the plume frame geometry.

Coordinates are local planar metres: x east, y north, z altitude above ground.
Wind is stored everywhere as a horizontal *to*-direction vector (the direction the
air moves), in m/s.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

# concentration_ppb = PPB_PER_UNIT * sum_j a_ij * s_j + background_ppb,
# with a_ij in s/m^3 and s_j in m^3/s of pure gas.
PPB_PER_UNIT = 1e9


class DegenerateFrameError(ValueError):
    """Raised when the plume frame is undefined because the wind speed is zero."""


def wind_from_met(speed, direction_deg):
    """Convert meteorological wind (speed, direction blown *from*) to a to-vector.

    Direction is clockwise from north, so 0 deg (northerly) gives a vector
    pointing due south.
    """
    theta = np.deg2rad(np.asarray(direction_deg, dtype=float))
    speed = np.asarray(speed, dtype=float)
    return np.stack([-speed * np.sin(theta), -speed * np.cos(theta)], axis=-1)


def wind_to_met(wind):
    """Inverse of :func:`wind_from_met`. Returns ``(speed, direction_deg)``."""
    wind = np.asarray(wind, dtype=float)
    speed = np.hypot(wind[..., 0], wind[..., 1])
    direction = np.rad2deg(np.arctan2(-wind[..., 0], -wind[..., 1])) % 360.0
    return speed, direction


def rotate(vectors, angle):
    """Rotate 2-D vectors counter-clockwise by ``angle`` radians."""
    vectors = np.asarray(vectors, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    return np.stack([c * vectors[..., 0] - s * vectors[..., 1],
                     s * vectors[..., 0] + c * vectors[..., 1]], axis=-1)


@dataclass(frozen=True)
class Measurement:
    time: float
    position: tuple[float, float, float]
    concentration: float
    wind: tuple[float, float]

    def __post_init__(self):
        if self.position[2] < 0:
            raise ValueError(f"altitude must be >= 0, got {self.position[2]}")
        if not np.isfinite(self.concentration):
            raise ValueError("concentration must be finite")


class Survey:
    """Ordered trajectory of concentration measurements.

    Stored column-wise as numpy arrays; indexing yields :class:`Measurement`.
    """

    def __init__(self, times, positions, concentrations, winds):
        self.times = np.array(times, dtype=float)
        self.positions = np.array(positions, dtype=float).reshape(-1, 3)
        self.concentrations = np.array(concentrations, dtype=float)
        self.winds = np.array(winds, dtype=float).reshape(-1, 2)
        n = len(self.times)
        if not (len(self.positions) == len(self.concentrations) == len(self.winds) == n):
            raise ValueError("survey columns have inconsistent lengths")
        if n < 2:
            raise ValueError(f"a survey needs at least 2 measurements, got {n}")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("measurement times must be strictly increasing")
        if np.any(self.positions[:, 2] < 0):
            raise ValueError("altitudes must be >= 0")
        if not np.all(np.isfinite(self.concentrations)):
            raise ValueError("concentrations must be finite")
        for arr in (self.times, self.positions, self.concentrations, self.winds):
            arr.setflags(write=False)

    @classmethod
    def from_measurements(cls, measurements: Sequence[Measurement]) -> "Survey":
        return cls([m.time for m in measurements],
                   [m.position for m in measurements],
                   [m.concentration for m in measurements],
                   [m.wind for m in measurements])

    @property
    def n(self) -> int:
        return len(self.times)

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> Measurement:
        return Measurement(float(self.times[i]), tuple(self.positions[i]),
                           float(self.concentrations[i]), tuple(self.winds[i]))

    def __iter__(self) -> Iterator[Measurement]:
        return (self[i] for i in range(self.n))

    @property
    def wind_speeds(self) -> np.ndarray:
        return np.hypot(self.winds[:, 0], self.winds[:, 1])

    def with_concentrations(self, concentrations) -> "Survey":
        return Survey(self.times, self.positions, concentrations, self.winds)


@dataclass(frozen=True)
class Source:
    """Ground source modelled as a 2-D Gaussian kernel.

    ``half_width`` is the kernel standard deviation in metres, ``emission_rate``
    is in m^3/s of pure gas and ``height`` is the release height above ground.
    """

    location: tuple[float, float]
    half_width: float = 0.0
    emission_rate: float = 0.0
    height: float = 0.0

    def __post_init__(self):
        if self.half_width < 0:
            raise ValueError("half_width must be >= 0")
        if self.emission_rate < 0:
            raise ValueError("emission_rate must be >= 0")
        if self.height < 0:
            raise ValueError("height must be >= 0")


@dataclass(frozen=True)
class SourceSet:
    sources: tuple[Source, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))

    @classmethod
    def from_arrays(cls, locations, half_widths, rates, height=0.0) -> "SourceSet":
        locations = np.asarray(locations, dtype=float).reshape(-1, 2)
        return cls(tuple(Source((float(x), float(y)), float(w), float(s), float(height))
                         for (x, y), w, s in zip(locations, half_widths, rates)))

    @property
    def m(self) -> int:
        return len(self.sources)

    def __len__(self) -> int:
        return self.m

    def __iter__(self):
        return iter(self.sources)

    def __getitem__(self, j):
        return self.sources[j]

    @property
    def locations(self) -> np.ndarray:
        return np.array([s.location for s in self.sources], dtype=float).reshape(-1, 2)

    @property
    def half_widths(self) -> np.ndarray:
        return np.array([s.half_width for s in self.sources], dtype=float)

    @property
    def rates(self) -> np.ndarray:
        return np.array([s.emission_rate for s in self.sources], dtype=float)

    @property
    def heights(self) -> np.ndarray:
        return np.array([s.height for s in self.sources], dtype=float)


def downwind_offsets(positions, source_xy, winds, bias=0.0):
    """Vectorised plume-frame offsets of measurement positions from one source.

    Args:
        positions: (n, 3) measurement positions.
        source_xy: ground location of the source.
        winds: (n, 2) or (2,) to-direction wind vectors.
        bias: counter-clockwise rotation applied to the wind, radians.

    Returns:
        ``(delta_r, delta_h, delta_v, speed)`` arrays. ``delta_h`` is positive to
        the left of the wind direction.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    u = rotate(np.broadcast_to(winds, (len(positions), 2)), bias)
    speed = np.hypot(u[:, 0], u[:, 1])
    if np.any(speed <= 0):
        raise DegenerateFrameError("wind speed must be > 0 to define a plume frame")
    ux, uy = u[:, 0] / speed, u[:, 1] / speed
    dx = positions[:, 0] - source_xy[0]
    dy = positions[:, 1] - source_xy[1]
    return dx * ux + dy * uy, -dx * uy + dy * ux, positions[:, 2].copy(), speed


def downwind_frame(measurement_position, source: Source, wind, bias: float = 0.0):
    """Along-wind, crosswind and vertical offsets of a measurement from a source."""
    dr, dh, dv, _ = downwind_offsets(np.asarray(measurement_position, dtype=float)[None, :],
                                     source.location, np.asarray(wind, dtype=float), bias)
    return float(dr[0]), float(dh[0]), float(dv[0])
