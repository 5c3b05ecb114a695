"""Synthetic surveys: random sources, a wandering wind, a flight path and simulated data."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import PPB_PER_UNIT, SourceSet, Survey, rotate, wind_from_met
from .optimizer import SourceGrid
from .plume import PlumeGeometry, build_matrix


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameters of a synthetic survey.

    Lengths are metres, rates m^3/s, angles degrees, times seconds and
    concentrations ppb. Wind speed, wind direction and the opening angles each
    follow a random walk reflected into its range with the given step size.
    """

    width: float = 40000.0
    height: float = 40000.0
    n_sources: int = 10
    rate: float = 0.1
    half_width: float = 100.0
    source_height: float = 0.0
    wind_speed: tuple[float, float] = (6.3, 6.6)
    wind_dir: tuple[float, float] = (218.0, 222.0)
    speed_step: float = 0.02
    dir_step: float = 0.2
    opening_angle: tuple[float, float] = (11.5, 13.9)
    angle_step: float = 0.1
    abl_depth: float = 400.0
    duration: float = 4137.0
    interval: float = 3.0
    altitude: float = 200.0
    pass_spacing: float = 4000.0
    background: float = 1800.0
    noise: float = 3.0
    wind_bias: float = 0.0
    min_signal: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("wind_speed", "wind_dir", "opening_angle"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} range is empty")
        if self.interval <= 0 or self.duration <= 0:
            raise ValueError("interval and duration must be > 0")
        if self.width <= 0 or self.height <= 0 or self.pass_spacing <= 0:
            raise ValueError("domain size and pass spacing must be > 0")
        if self.wind_speed[0] <= 0:
            raise ValueError("wind speed must be > 0")

    @property
    def n_samples(self) -> int:
        return int(np.floor(self.duration / self.interval + 1e-9))


@dataclass
class GroundTruth:
    """True state behind a synthetic survey."""

    sources: SourceSet
    winds: np.ndarray
    background: np.ndarray
    noiseless: np.ndarray
    opening_angles: np.ndarray
    wind_bias: float = 0.0
    domain: tuple = field(default=(0.0, 0.0, 0.0, 0.0))


def reflect_into(x, lo, hi):
    """Fold ``x`` back into [lo, hi] by mirror reflection at the bounds."""
    if hi <= lo:
        return np.full_like(np.asarray(x, dtype=float), lo)
    span = hi - lo
    y = np.mod(np.asarray(x, dtype=float) - lo, 2.0 * span)
    return lo + np.where(y > span, 2.0 * span - y, y)


def bounded_walk(n, lo, hi, step, rng):
    """Random walk of length ``n`` started uniformly in [lo, hi], reflecting at the bounds."""
    out = np.empty(n)
    out[0] = rng.uniform(lo, hi)
    steps = step * rng.standard_normal(n - 1)
    for k in range(1, n):
        out[k] = reflect_into(out[k - 1] + steps[k - 1], lo, hi)
    return out


def _clip_line(origin, direction, box):
    """Parameter interval of the line origin + t * direction inside the box, or None."""
    x0, y0, x1, y1 = box
    lo, hi = -np.inf, np.inf
    for o, d, a, b in ((origin[0], direction[0], x0, x1), (origin[1], direction[1], y0, y1)):
        if abs(d) < 1e-12:
            if not a <= o <= b:
                return None
            continue
        t1, t2 = sorted(((a - o) / d, (b - o) / d))
        lo, hi = max(lo, t1), min(hi, t2)
    return (lo, hi) if hi > lo else None


def serpentine(box, wind_to, spacing):
    """Crosswind passes spaced ``spacing`` apart along the wind, clipped to the box.

    Returns the (k, 2) polyline vertices, alternating pass direction.
    """
    u = np.asarray(wind_to, dtype=float) / np.hypot(*wind_to)
    p = np.array([-u[1], u[0]])
    x0, y0, x1, y1 = box
    corners = np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1]])
    along = corners @ u
    centre = np.array([(x0 + x1) / 2, (y0 + y1) / 2])
    c_along = centre @ u
    vertices = []
    for k, a in enumerate(np.arange(along.min() + spacing / 2, along.max(), spacing)):
        origin = centre + (a - c_along) * u
        seg = _clip_line(origin, p, box)
        if seg is None or seg[1] - seg[0] < spacing / 4:
            continue
        ends = [origin + seg[0] * p, origin + seg[1] * p]
        if len(vertices) // 2 % 2:
            ends.reverse()
        vertices.extend(ends)
    return np.array(vertices)


def sample_polyline(vertices, n):
    """``n`` points equally spaced by arc length along a polyline."""
    seg = np.hypot(*np.diff(vertices, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    d = np.linspace(0.0, cum[-1], n)
    return np.column_stack([np.interp(d, cum, vertices[:, 0]), np.interp(d, cum, vertices[:, 1])]), cum[-1]


def _simulate(positions, times, spec_like, sources, rng):
    """Shared wind, angle and concentration simulation."""
    n = len(times)
    speed = bounded_walk(n, *spec_like.wind_speed, spec_like.speed_step, rng)
    direction = bounded_walk(n, *spec_like.wind_dir, spec_like.dir_step, rng)
    gh = bounded_walk(n, *spec_like.opening_angle, spec_like.angle_step, rng)
    gv = bounded_walk(n, *spec_like.opening_angle, spec_like.angle_step, rng)
    true_winds = wind_from_met(speed, direction)
    angles = np.deg2rad(np.column_stack([gh, gv]))
    geom = PlumeGeometry(abl_depth=spec_like.abl_depth)
    probe = Survey(times, positions, np.zeros(n), true_winds)
    A = build_matrix(probe, sources, geom, opening_angles=(angles[:, 0], angles[:, 1])).to_ppb()
    return true_winds, angles, A


def generate(spec: ScenarioSpec = ScenarioSpec(), rng=None):
    """Simulate a survey over randomly placed ground sources.

    Sources that would add less than ``spec.min_signal`` ppb everywhere on the
    flight path are redrawn, so every source is seen downwind at least once.
    The recorded wind is the true wind rotated by ``-spec.wind_bias`` degrees.

    Returns:
        ``(survey, truth)``.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    n = spec.n_samples
    box = (0.0, 0.0, spec.width, spec.height)
    mean_dir = 0.5 * (spec.wind_dir[0] + spec.wind_dir[1])
    path, length = sample_polyline(serpentine(box, wind_from_met(1.0, mean_dir), spec.pass_spacing), n)
    times = spec.interval * np.arange(n)
    positions = np.column_stack([path, np.full(n, spec.altitude)])

    # wind and angles are drawn first so the source redraws do not change them
    locations = np.zeros((0, 2))
    true_winds = angles = None
    contrib = np.zeros((n, 0))
    for _ in range(1000 * max(spec.n_sources, 1)):
        if len(locations) >= spec.n_sources:
            break
        cand = rng.uniform([0.0, 0.0], [spec.width, spec.height])
        one = SourceSet.from_arrays(cand[None, :], [spec.half_width], [spec.rate], spec.source_height)
        if true_winds is None:
            true_winds, angles, col = _simulate(positions, times, spec, one, rng)
        else:
            col = _coupling(positions, times, true_winds, angles, spec.abl_depth, one)
        if spec.rate * col.max() < spec.min_signal:
            continue
        locations = np.vstack([locations, cand])
        contrib = np.hstack([contrib, col])
    else:
        if len(locations) < spec.n_sources:
            raise RuntimeError("could not place sources that reach the flight path")
    if true_winds is None:
        speed = bounded_walk(n, *spec.wind_speed, spec.speed_step, rng)
        direction = bounded_walk(n, *spec.wind_dir, spec.dir_step, rng)
        true_winds = wind_from_met(speed, direction)
        angles = np.deg2rad(np.full((n, 2), np.mean(spec.opening_angle)))
    sources = SourceSet.from_arrays(locations, np.full(len(locations), spec.half_width),
                                    np.full(len(locations), spec.rate), spec.source_height)
    return _finish(spec, times, positions, true_winds, angles, sources, contrib, box, rng)


def _coupling(positions, times, winds, angles, depth, sources):
    geom = PlumeGeometry(abl_depth=depth)
    probe = Survey(times, positions, np.zeros(len(times)), winds)
    return build_matrix(probe, sources, geom, opening_angles=(angles[:, 0], angles[:, 1])).to_ppb()


def _finish(spec, times, positions, true_winds, angles, sources, contrib, box, rng):
    n = len(times)
    background = np.full(n, float(spec.background))
    noiseless = background + (contrib @ sources.rates if sources.m else 0.0)
    y = noiseless + spec.noise * rng.standard_normal(n) if spec.noise > 0 else noiseless.copy()
    recorded = rotate(true_winds, -np.deg2rad(spec.wind_bias))
    survey = Survey(times, positions, y, recorded)
    truth = GroundTruth(sources, true_winds, background, noiseless, angles,
                        float(np.deg2rad(spec.wind_bias)), box)
    return survey, truth


@dataclass(frozen=True)
class FlareSpec:
    """Single elevated source surveyed by stacked Z-shaped circuits downwind."""

    width: float = 15000.0
    height: float = 15000.0
    rate: float = 0.2
    half_width: float = 10.0
    source_height: float = 50.0
    wind_speed: tuple[float, float] = (10.9, 11.1)
    wind_dir: tuple[float, float] = (242.5, 243.5)
    speed_step: float = 0.02
    dir_step: float = 0.05
    opening_angle: tuple[float, float] = (11.5, 13.9)
    angle_step: float = 0.1
    abl_depth: float = 1500.0
    circuits: int = 8
    altitudes: tuple[float, float] = (150.0, 350.0)
    downwind: tuple[float, float] = (1000.0, 3000.0)
    pass_half_length: float = 2500.0
    airspeed: float = 60.0
    interval: float = 3.0
    background: float = 1900.0
    noise: float = 3.0
    wind_bias: float = -18.0
    seed: int = 0


def flare_scenario(spec: FlareSpec = FlareSpec(), rng=None):
    """Simulate a flare survey: Z-shaped circuits at rising altitude.

    Each circuit crosses the plume three times: crosswind at a near range, back
    diagonally, then crosswind at a far range. Near ranges step through the
    first half of ``spec.downwind`` and the far leg sits half that span beyond.
    Circuits alternate sides so the transit between them runs along-wind
    outside the plume.

    Returns:
        ``(survey, truth)`` with the source at the domain centre.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    centre = np.array([spec.width / 2, spec.height / 2])
    u = wind_from_met(1.0, 0.5 * (spec.wind_dir[0] + spec.wind_dir[1]))
    p = np.array([-u[1], u[0]]) * spec.pass_half_length
    span = spec.downwind[1] - spec.downwind[0]
    near = spec.downwind[0] + np.linspace(0.0, span / 2, spec.circuits)
    alts = np.linspace(*spec.altitudes, spec.circuits)
    vertices, heights = [], []
    for k, (r, alt) in enumerate(zip(near, alts)):
        side = 1.0 if k % 2 == 0 else -1.0
        far = r + span / 2
        vertices.extend([centre + r * u - side * p, centre + r * u + side * p,
                         centre + far * u - side * p, centre + far * u + side * p])
        heights.extend([alt] * 4)
    vertices = np.array(vertices)
    seg = np.hypot(*np.diff(vertices, axis=0).T)
    n = int(np.floor(seg.sum() / spec.airspeed / spec.interval)) + 1
    path, _ = sample_polyline(vertices, n)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    d = np.linspace(0.0, cum[-1], n)
    alt = np.interp(d, cum, np.array(heights))
    times = spec.interval * np.arange(n)
    positions = np.column_stack([path, alt])
    sources = SourceSet.from_arrays(centre[None, :], [spec.half_width], [spec.rate], spec.source_height)
    true_winds, angles, contrib = _simulate(positions, times, spec, sources, rng)
    box = (0.0, 0.0, spec.width, spec.height)
    return _finish(spec, times, positions, true_winds, angles, sources, contrib, box, rng)


# -- scoring -------------------------------------------------------------------
@dataclass
class ScoreReport:
    """Greedy nearest matching of estimated to true sources.

    ``matches`` holds ``(true_index, estimate_index, distance_m, relative_rate_error)``.
    """

    hits: int
    misses: int
    spurious: int
    matches: list
    estimates: np.ndarray

    @property
    def location_errors(self) -> np.ndarray:
        return np.array([m[2] for m in self.matches])

    @property
    def rate_errors(self) -> np.ndarray:
        return np.array([m[3] for m in self.matches])


def map_components(grid: SourceGrid, values, threshold: float = 0.0) -> np.ndarray:
    """Group cells above ``threshold`` into 4-connected blobs.

    Returns:
        (k, 3) array of rate-weighted centroid x, y and summed rate per blob.
    """
    values = np.asarray(values, dtype=float).reshape(grid.ny, grid.nx)
    labels, k = ndimage.label(values > threshold)
    if k == 0:
        return np.zeros((0, 3))
    centers = grid.centers().reshape(grid.ny, grid.nx, 2)
    idx = np.arange(1, k + 1)
    total = ndimage.sum(values, labels, idx)
    cx = ndimage.sum(values * centers[..., 0], labels, idx) / total
    cy = ndimage.sum(values * centers[..., 1], labels, idx) / total
    return np.column_stack([cx, cy, total])


def score(estimate, truth: GroundTruth, radius: float = 1500.0, grid: SourceGrid = None,
          threshold: float = 0.0) -> ScoreReport:
    """Match an estimate to the true sources.

    Args:
        estimate: a :class:`SourceSet`, an (k, 3) array of (x, y, rate), or a
            per-cell rate map (then ``grid`` is required and connected cells
            are merged into one estimated source).
        truth: ground truth.
        radius: maximum match distance, metres.
        grid: layout of a map estimate.
        threshold: cells at or below this rate are ignored.
    """
    if isinstance(estimate, SourceSet):
        est = np.column_stack([estimate.locations, estimate.rates]) if estimate.m else np.zeros((0, 3))
    elif isinstance(estimate, SourceGrid):
        est = map_components(estimate, estimate.rates, threshold)
    elif grid is not None:
        est = map_components(grid, estimate, threshold)
    else:
        est = np.asarray(estimate, dtype=float).reshape(-1, 3)
    true_xy, true_s = truth.sources.locations, truth.sources.rates
    pairs = []
    if len(est) and len(true_xy):
        dist = np.hypot(true_xy[:, None, 0] - est[None, :, 0], true_xy[:, None, 1] - est[None, :, 1])
        order = np.argsort(dist, axis=None, kind="stable")
        used_t, used_e = set(), set()
        for flat in order:
            i, j = np.unravel_index(flat, dist.shape)
            if dist[i, j] > radius:
                break
            if i in used_t or j in used_e:
                continue
            used_t.add(i)
            used_e.add(j)
            rel = abs(est[j, 2] - true_s[i]) / true_s[i] if true_s[i] > 0 else float(est[j, 2] > 0)
            pairs.append((int(i), int(j), float(dist[i, j]), float(rel)))
    hits = len(pairs)
    return ScoreReport(hits, len(true_xy) - hits, len(est) - hits, pairs, est)
