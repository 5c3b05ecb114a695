"""Gridded emission maps and diagnostics from a chain trace."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..optimizer import SourceGrid
from .chain import ChainTrace

QUANTILES = (0.025, 0.5, 0.975)


@dataclass
class Summary:
    """Posterior summaries.

    Attributes:
        grid: cell layout of the maps.
        deposits: (snapshots, cells) rate deposited per cell, m^3/s.
        lower, median, upper: per-cell 2.5%, 50% and 97.5% quantile maps.
        background_bands: (n, 3) background quantiles per measurement, ppb.
        residuals: (n, 2) columns measured ppb and median residual ppb, or None.
        acceptance: move name -> acceptance rate.
        scalar_bands: parameter name -> (2.5%, 50%, 97.5%).
    """

    grid: SourceGrid
    deposits: np.ndarray
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    background_bands: np.ndarray
    residuals: np.ndarray
    acceptance: dict
    scalar_bands: dict


def deposit(trace: ChainTrace, grid: SourceGrid) -> np.ndarray:
    """Sum each snapshot's source rates into the cells holding their locations."""
    out = np.zeros((len(trace), grid.size))
    for k, params in enumerate(trace.sources):
        if len(params) == 0:
            continue
        idx = grid.cell_index(params[:, :2])
        inside = idx >= 0
        out[k] = np.bincount(idx[inside], weights=params[inside, 3], minlength=grid.size)
    return out


def summarize(trace: ChainTrace, grid: SourceGrid, measured=None) -> Summary:
    """Emission-rate quantile maps, background bands and residual pairs.

    Args:
        trace: non-empty chain trace.
        grid: map layout.
        measured: optional measured concentrations (ppb) for residual pairs.
    """
    if len(trace) == 0:
        raise ValueError("cannot summarise an empty trace")
    dep = deposit(trace, grid)
    lower, median, upper = np.quantile(dep, QUANTILES, axis=0)
    bg = np.asarray(trace.background)
    bands = np.quantile(bg, QUANTILES, axis=0).T
    residuals = None
    if measured is not None:
        measured = np.asarray(measured, dtype=float)
        fitted = bg + np.asarray(trace.plume)
        residuals = np.column_stack([measured, np.median(measured - fitted, axis=0)])
    scal = trace.scalars()
    bands_s = {k: tuple(np.quantile(scal[k], QUANTILES)) for k in ("m", "sigma", "bias", "gamma_h", "gamma_v")}
    return Summary(grid, dep, lower, median, upper, bands, residuals, trace.acceptance_rates(), bands_s)
