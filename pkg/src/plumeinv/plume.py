"""Gaussian plume coupling with ground and boundary-layer reflections."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PPB_PER_UNIT, Measurement, Source, SourceSet, Survey, downwind_offsets

NEAR_FIELD_FLOOR = 0.1  # metres; lower bound on both plume standard deviations
IMAGE_RTOL = 1e-12


@dataclass(frozen=True)
class PlumeGeometry:
    """Plume spreading and boundary-layer parameters.

    Attributes:
        opening_angle_h: horizontal opening angle, radians.
        opening_angle_v: vertical opening angle, radians.
        abl_depth: atmospheric boundary layer depth, metres.
        wind_bias: counter-clockwise rotation added to every wind vector, radians.
        image_terms: number of reflection orders summed (k = 0 .. image_terms - 1).
    """

    opening_angle_h: float = np.deg2rad(12.7)
    opening_angle_v: float = np.deg2rad(12.7)
    abl_depth: float = 400.0
    wind_bias: float = 0.0
    image_terms: int = 16

    def __post_init__(self):
        for name in ("opening_angle_h", "opening_angle_v"):
            v = getattr(self, name)
            if not 0 < v < np.pi / 2:
                raise ValueError(f"{name} must lie in (0, pi/2), got {v}")
        if self.abl_depth <= 0:
            raise ValueError("abl_depth must be > 0")
        if self.image_terms < 2:
            raise ValueError("image_terms must be >= 2")


@dataclass(frozen=True)
class CouplingMatrix:
    """Dense n x m coupling matrix in s/m^3."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2:
            raise ValueError("coupling matrix must be 2-D")
        if not np.all(np.isfinite(e)) or np.any(e < 0):
            raise ValueError("coupling entries must be finite and non-negative")

    @property
    def shape(self):
        return self.entries.shape

    def to_ppb(self) -> np.ndarray:
        """Forward operator in ppb per (m^3/s)."""
        return PPB_PER_UNIT * self.entries

    def predict_ppb(self, rates) -> np.ndarray:
        return self.to_ppb() @ np.asarray(rates, dtype=float)


def reflection_sum(dv, height, sigma_v, depth, image_terms):
    """Sum of vertical Gaussian image terms between the ground and the ABL lid.

    Images sit at 2kD +/- H for every integer k; order k contributes the four
    terms with |2kD| and the k = 0 order contributes the direct and ground terms.
    Summation stops early once a whole order adds less than IMAGE_RTOL of the
    running total everywhere.

    Where sigma_v >= D the images overlap so strongly that a truncated sum
    loses mass; there the full periodic sum is evaluated through its Fourier
    (Poisson-summed) series, which converges to machine precision in four terms.
    """
    dv, sigma_v = np.broadcast_arrays(np.asarray(dv, dtype=float), np.asarray(sigma_v, dtype=float))
    wide = sigma_v >= depth
    if np.any(wide):
        out = np.empty(dv.shape)
        out[wide] = _periodic_image_sum(dv[wide], height, sigma_v[wide], depth)
        if np.any(~wide):
            out[~wide] = _direct_image_sum(dv[~wide], height, sigma_v[~wide], depth, image_terms)
        return out
    return _direct_image_sum(dv, height, sigma_v, depth, image_terms)


def _periodic_image_sum(dv, height, sigma_v, depth, orders=4):
    """sum_k g(dv - H - 2kD) + g(dv + H - 2kD) for Gaussians g of width sigma_v, k over all integers."""
    ratio = np.pi * sigma_v / depth
    series = 2.0 * np.ones_like(dv)
    for n in range(1, orders + 1):
        damp = np.exp(-0.5 * np.square(n * ratio))
        series += 2.0 * damp * (np.cos(np.pi * n * (dv - height) / depth) + np.cos(np.pi * n * (dv + height) / depth))
    return sigma_v * np.sqrt(2.0 * np.pi) / (2.0 * depth) * series


def _direct_image_sum(dv, height, sigma_v, depth, image_terms):
    inv = 0.5 / np.square(sigma_v)
    total = np.exp(-np.square(dv - height) * inv) + np.exp(-np.square(dv + height) * inv)
    for k in range(1, image_terms):
        a = 2.0 * k * depth
        term = (np.exp(-np.square(dv - a - height) * inv) + np.exp(-np.square(dv - a + height) * inv)
                + np.exp(-np.square(dv + a - height) * inv) + np.exp(-np.square(dv + a + height) * inv))
        total = total + term
        if np.all(term <= IMAGE_RTOL * total):
            break
    return total


def coupling_from_offsets(dr, dh, dv, speed, half_width, height, tan_h, tan_v, depth, image_terms):
    """Plume coupling (s/m^3) from plume-frame offsets; zero upwind (dr <= 0)."""
    dr, dh, dv, speed = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (dr, dh, dv, speed)))
    out = np.zeros(dr.shape)
    mask = dr > 0
    if not np.any(mask):
        return out
    tan_h = np.broadcast_to(tan_h, dr.shape)[mask]
    tan_v = np.broadcast_to(tan_v, dr.shape)[mask]
    r = dr[mask]
    sig_h = np.maximum(r * tan_h + half_width, NEAR_FIELD_FLOOR)
    sig_v = np.maximum(r * tan_v, NEAR_FIELD_FLOOR)
    vert = reflection_sum(dv[mask], height, sig_v, depth, image_terms)
    out[mask] = (np.exp(-0.5 * np.square(dh[mask] / sig_h)) * vert
                 / (2.0 * np.pi * speed[mask] * sig_h * sig_v))
    return out


def coupling_column(positions, winds, source_xy, half_width, height, geom: PlumeGeometry,
                    opening_angles=None):
    """Coupling of one source to every measurement, s/m^3.

    ``opening_angles`` optionally overrides the geometry with per-measurement
    ``(gamma_h, gamma_v)`` arrays (used when simulating data).
    """
    dr, dh, dv, speed = downwind_offsets(positions, source_xy, winds, geom.wind_bias)
    if opening_angles is None:
        tan_h, tan_v = np.tan(geom.opening_angle_h), np.tan(geom.opening_angle_v)
    else:
        tan_h, tan_v = np.tan(opening_angles[0]), np.tan(opening_angles[1])
    return coupling_from_offsets(dr, dh, dv, speed, half_width, height, tan_h, tan_v,
                                 geom.abl_depth, geom.image_terms)


def coupling(measurement: Measurement, source: Source, geom: PlumeGeometry) -> float:
    """Coupling a(x, z, w) of a single source/measurement pair, s/m^3."""
    col = coupling_column(np.asarray(measurement.position)[None, :], np.asarray(measurement.wind),
                          source.location, source.half_width, source.height, geom)
    return float(col[0])


def build_matrix(survey: Survey, sources: SourceSet, geom: PlumeGeometry,
                 opening_angles=None) -> CouplingMatrix:
    """Assemble A with A[i, j] = coupling(measurement_i, source_j)."""
    entries = np.zeros((survey.n, sources.m))
    for j, src in enumerate(sources):
        entries[:, j] = coupling_column(survey.positions, survey.winds, src.location,
                                        src.half_width, src.height, geom, opening_angles)
    return CouplingMatrix(entries)


class PlumeForward:
    """Forward operator used by the sampler: columns in ppb per (m^3/s).

    Source heights are a fixed constant for the whole run.
    """

    def __init__(self, survey: Survey, source_height: float = 0.0):
        self.survey = survey
        self.source_height = float(source_height)
        self.n = survey.n

    def columns(self, locations, half_widths, geom: PlumeGeometry) -> np.ndarray:
        locations = np.asarray(locations, dtype=float).reshape(-1, 2)
        out = np.empty((self.n, len(locations)))
        for j in range(len(locations)):
            out[:, j] = coupling_column(self.survey.positions, self.survey.winds, locations[j],
                                        half_widths[j], self.source_height, geom)
        return PPB_PER_UNIT * out
