"""CSV and array file formats for surveys, grids, ground truth and chain traces.

Floats are written with 17 significant digits so every file reads back to the
exact values that were written.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .core import SourceSet, Survey, wind_from_met, wind_to_met
from .optimizer import SourceGrid
from .sampler.chain import MOVE_NAMES, ChainTrace

SURVEY_HEADER = ("time_s", "east_m", "north_m", "alt_m", "conc_ppb", "wind_speed_ms", "wind_dir_deg_met")
GRID_HEADER = ("east_m", "north_m", "value")
SOURCE_HEADER = ("east_m", "north_m", "half_width_m", "rate_m3s")
FLOAT_FMT = "%.17g"


class FormatError(ValueError):
    """Malformed input file. ``line`` is the 1-based line number when known."""

    def __init__(self, message, path=None, line=None):
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.path = str(path) if path is not None else None
        self.line = line


def _fmt(x) -> str:
    return FLOAT_FMT % x


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row) + "\n")


def read_table(path, header):
    """Float rows of a CSV with an exact header. Errors name the offending line."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise FormatError("file is empty", path) from None
        if tuple(c.strip() for c in first) != tuple(header):
            raise FormatError(f"expected header {','.join(header)}", path, 1)
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise FormatError(f"expected {len(header)} fields, got {len(row)}", path, line)
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise FormatError(f"non-numeric field in {row!r}", path, line) from None
            if not all(np.isfinite(vals)):
                raise FormatError("non-finite value", path, line)
            rows.append((line, vals))
    return rows


# -- surveys -------------------------------------------------------------------
def write_survey(path, survey: Survey) -> None:
    speed, direction = wind_to_met(survey.winds)
    rows = zip(survey.times, survey.positions[:, 0], survey.positions[:, 1], survey.positions[:, 2],
               survey.concentrations, speed, direction)
    write_table(path, SURVEY_HEADER, rows)


def ingest_survey(path) -> Survey:
    """Read a survey CSV, converting meteorological wind to to-vectors.

    Raises:
        FormatError: malformed rows, non-increasing times, negative altitude,
            negative wind speed or fewer than two rows.
    """
    rows = read_table(path, SURVEY_HEADER)
    if len(rows) < 2:
        raise FormatError(f"a survey needs at least 2 rows, got {len(rows)}", path)
    prev = -np.inf
    for line, (t, _, _, alt, _, speed, _) in rows:
        if t <= prev:
            raise FormatError("time_s must be strictly increasing", path, line)
        if alt < 0:
            raise FormatError("alt_m must be >= 0", path, line)
        if speed < 0:
            raise FormatError("wind_speed_ms must be >= 0", path, line)
        prev = t
    data = np.array([vals for _, vals in rows])
    winds = wind_from_met(data[:, 5], data[:, 6])
    return Survey(data[:, 0], data[:, 1:4], data[:, 4], winds)


# -- grids ---------------------------------------------------------------------
def write_grid(path, grid: SourceGrid, values) -> None:
    c = grid.centers()
    write_table(path, GRID_HEADER, zip(c[:, 0], c[:, 1], np.asarray(values, dtype=float)))


def read_grid(path) -> SourceGrid:
    """Rebuild a grid (layout and values) from row-major cell centres."""
    data = np.array([vals for _, vals in read_table(path, GRID_HEADER)]).reshape(-1, 3)
    if len(data) == 0:
        raise FormatError("grid file has no cells", path)
    xs, ys = np.unique(data[:, 0]), np.unique(data[:, 1])
    nx, ny = len(xs), len(ys)
    if nx * ny != len(data):
        raise FormatError("cells do not form a full rectangular grid", path)
    cell = float(np.diff(xs).mean()) if nx > 1 else (float(np.diff(ys).mean()) if ny > 1 else 1.0)
    grid = SourceGrid((float(xs[0] - cell / 2), float(ys[0] - cell / 2)), cell, nx, ny)
    if not np.allclose(grid.centers(), data[:, :2], rtol=0, atol=1e-6 * cell):
        raise FormatError("cells are not in row-major order with the east index fastest", path)
    return grid.with_rates(data[:, 2])


# -- sources and ground truth --------------------------------------------------
def write_sources(path, sources: SourceSet) -> None:
    write_table(path, SOURCE_HEADER, zip(sources.locations[:, 0], sources.locations[:, 1],
                                         sources.half_widths, sources.rates))


def read_sources(path, height: float = 0.0) -> SourceSet:
    data = np.array([vals for _, vals in read_table(path, SOURCE_HEADER)]).reshape(-1, 4)
    return SourceSet.from_arrays(data[:, :2], data[:, 2], data[:, 3], height)


def write_truth(out: Path, truth, survey: Survey, extra: dict = None) -> None:
    out = Path(out)
    write_sources(out / "truth_sources.csv", truth.sources)
    rows = zip(survey.times, truth.background, truth.noiseless, truth.winds[:, 0], truth.winds[:, 1],
               truth.opening_angles[:, 0], truth.opening_angles[:, 1])
    write_table(out / "truth_series.csv", ("time_s", "background_ppb", "noiseless_ppb", "wind_east_ms",
                                           "wind_north_ms", "opening_h_rad", "opening_v_rad"), rows)
    meta = {"wind_bias_rad": truth.wind_bias, "domain": list(map(float, truth.domain)),
            "source_height_m": float(truth.sources.heights[0]) if truth.sources.m else 0.0, **(extra or {})}
    (out / "truth.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def read_truth(out: Path):
    """Ground truth written by :func:`write_truth`."""
    from .synth import GroundTruth

    out = Path(out)
    meta = json.loads((out / "truth.json").read_text())
    sources = read_sources(out / "truth_sources.csv", meta.get("source_height_m", 0.0))
    header = ("time_s", "background_ppb", "noiseless_ppb", "wind_east_ms", "wind_north_ms",
              "opening_h_rad", "opening_v_rad")
    series = np.array([v for _, v in read_table(out / "truth_series.csv", header)])
    return GroundTruth(sources, series[:, 3:5], series[:, 1], series[:, 2], series[:, 5:7],
                       meta["wind_bias_rad"], tuple(meta["domain"]))


# -- chain traces ----------------------------------------------------------------
SCALAR_HEADER = ("iteration", "m", "sigma", "bias", "gamma_h", "gamma_v", "log_post")
TRACE_SOURCE_HEADER = ("snapshot", "east_m", "north_m", "half_width_m", "rate_m3s")


def write_trace(out: Path, trace: ChainTrace) -> None:
    """Write a trace as CSV tables plus ``.npy`` arrays for the per-measurement series."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    sc = trace.scalars()
    write_table(out / "trace_scalars.csv", SCALAR_HEADER,
                zip(sc["iteration"], sc["m"], sc["sigma"], sc["bias"], sc["gamma_h"], sc["gamma_v"],
                    sc["log_post"]))
    rows = [(k, *map(float, p)) for k, params in enumerate(trace.sources) for p in params]
    write_table(out / "trace_sources.csv", TRACE_SOURCE_HEADER, rows)
    np.save(out / "trace_background.npy", np.asarray(trace.background, dtype=float))
    np.save(out / "trace_plume.npy", np.asarray(trace.plume, dtype=float))
    write_table(out / "acceptance.csv", ("move", "proposed", "accepted"),
                [(k, trace.proposed[k], trace.accepted[k]) for k in MOVE_NAMES])


def read_trace(out: Path) -> ChainTrace:
    out = Path(out)
    sc = np.array([v for _, v in read_table(out / "trace_scalars.csv", SCALAR_HEADER)]).reshape(-1, 7)
    src = np.array([v for _, v in read_table(out / "trace_sources.csv", TRACE_SOURCE_HEADER)]).reshape(-1, 5)
    t = ChainTrace()
    t.iterations = sc[:, 0].astype(int).tolist()
    t.sigma, t.bias, t.gamma_h, t.gamma_v, t.log_post = (sc[:, k].tolist() for k in range(2, 7))
    snap = src[:, 0].astype(int)
    t.sources = [src[snap == k, 1:] for k in range(len(sc))]
    if not np.array_equal(t.m, sc[:, 1].astype(int)):
        raise FormatError("source rows disagree with the recorded source counts", out / "trace_sources.csv")
    t.background = list(np.load(out / "trace_background.npy"))
    t.plume = list(np.load(out / "trace_plume.npy"))
    with open(out / "acceptance.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for name, proposed, accepted in reader:
            t.proposed[name] = int(proposed)
            t.accepted[name] = int(accepted)
    return t
