"""Run configuration: flat dotted ``key=value`` files with typed defaults.

Floats set to ``nan`` mean "derive automatically". Tuples are written as
comma-separated numbers.
"""

from __future__ import annotations

import math
from pathlib import Path

NAN = float("nan")


class ConfigError(ValueError):
    """Unknown key, bad value or malformed line in a config file."""


# key -> (default, help)
DEFAULTS: dict[str, tuple[object, str]] = {
    # synthetic survey
    "synth.kind": ("random", "scenario: 'random' (ground sources) or 'flare' (single stack)"),
    "synth.width": (40000.0, "domain east extent, m"),
    "synth.height": (40000.0, "domain north extent, m"),
    "synth.n_sources": (10, "number of ground sources"),
    "synth.rate": (0.1, "emission rate per source, m^3/s"),
    "synth.half_width": (100.0, "true source half width, m"),
    "synth.wind_speed": ((6.3, 6.6), "wind speed range, m/s"),
    "synth.wind_dir": ((218.0, 222.0), "wind direction range, degrees from"),
    "synth.speed_step": (0.02, "wind speed random-walk step, m/s"),
    "synth.dir_step": (0.2, "wind direction random-walk step, degrees"),
    "synth.opening_angle": ((11.5, 13.9), "opening angle range, degrees"),
    "synth.angle_step": (0.1, "opening angle random-walk step, degrees"),
    "synth.abl_depth": (400.0, "boundary layer depth, m"),
    "synth.duration": (4137.0, "flight duration, s"),
    "synth.interval": (3.0, "sampling interval, s"),
    "synth.altitude": (200.0, "flight altitude, m"),
    "synth.pass_spacing": (4000.0, "along-wind spacing of crosswind passes, m"),
    "synth.background": (1800.0, "constant background, ppb"),
    "synth.noise": (3.0, "measurement noise standard deviation, ppb"),
    "synth.wind_bias": (0.0, "bias of recorded wind relative to truth, degrees"),
    "synth.min_signal": (1.0, "redraw sources peaking below this on the path, ppb"),
    "flare.wind_bias": (-18.0, "flare scenario wind bias, degrees"),
    "flare.rate": (0.2, "flare emission rate, m^3/s"),
    "flare.noise": (3.0, "flare measurement noise, ppb"),
    # plume
    "plume.opening_angle_h": (12.7, "horizontal opening angle, degrees"),
    "plume.opening_angle_v": (12.7, "vertical opening angle, degrees"),
    "plume.abl_depth": (NAN, "boundary layer depth, m (nan: from truth.json scenario, else 400)"),
    "plume.image_terms": (16, "reflection orders summed"),
    "plume.source_height": (NAN, "source release height, m (nan: from truth.json, else 0)"),
    # background
    "background.kind": ("mrf", "'mrf' or 'chebyshev'"),
    "background.c_t": (0.005, "MRF time coefficient, ppb^-1/2 s^-1"),
    "background.c_d": (0.0005, "MRF distance coefficient, ppb^-1/2 m^-1"),
    "background.mu": (1.0, "background prior precision multiplier"),
    "background.beta0": (NAN, "reference level, ppb (nan: 5th percentile of data)"),
    "background.degrees": ((2, 2, 0, 2), "Chebyshev degrees in east, north, altitude, time"),
    "background.mu1": (1e-6, "Chebyshev ridge weight"),
    "background.mu2": (1.0, "Chebyshev curvature weight"),
    "background.mu3": (1.0, "Chebyshev transport weight"),
    # grid
    "grid.cell_size": (1000.0, "grid cell size, m"),
    "grid.x_min": (NAN, "grid west edge, m (nan: truth domain or survey extent)"),
    "grid.y_min": (NAN, "grid south edge, m"),
    "grid.x_max": (NAN, "grid east edge, m"),
    "grid.y_max": (NAN, "grid north edge, m"),
    "grid.margin": (0.0, "padding around the survey extent when no domain is known, m"),
    # optimizer
    "optimizer.sigma": (3.0, "noise scale in the objective, ppb"),
    "optimizer.lam": (NAN, "sparsity weight (nan: lam_fraction * lambda_max)"),
    "optimizer.lam_fraction": (0.02, "automatic sparsity weight as a fraction of lambda_max"),
    "optimizer.tau": (NAN, "allowed background excess over data, ppb (nan: 3 sigma)"),
    "optimizer.s_max": (10.0, "per-cell rate upper bound, m^3/s"),
    "optimizer.max_outer": (200, "alternating iterations"),
    "optimizer.tol": (1e-8, "relative objective tolerance"),
    # sampler
    "sampler.iterations": (13000, "total iterations"),
    "sampler.burn_in": (3000, "discarded iterations"),
    "sampler.thin": (1, "keep every thin-th iteration"),
    "sampler.audit_every": (1000, "iterations between cached-posterior audits"),
    "sampler.init_k": (15, "initial sources drawn from the optimiser map"),
    "sampler.init_sigma": (3.0, "initial noise scale, ppb"),
    "sampler.init_half_width": (NAN, "initial source half width, m (nan: half a cell, capped at width_max)"),
    "sampler.init_bias": (0.0, "initial wind bias, degrees"),
    "sampler.width_max": (200.0, "half-width prior upper bound, m"),
    "sampler.rate_max": (1.0, "rate prior upper bound, m^3/s"),
    "sampler.m_max": (30, "maximum number of sources"),
    "sampler.m_min": (0, "minimum number of sources"),
    "sampler.sample_sigma": (True, "sample the noise scale"),
    "sampler.sample_background": (True, "sample the background"),
    "sampler.sample_bias": (True, "sample the wind bias"),
    "sampler.sample_angles": (False, "sample the opening angles"),
    "sampler.location_step": (250.0, "location random-walk sd, m"),
    "sampler.width_step": (20.0, "half-width random-walk sd, m"),
    "sampler.rate_step": (0.01, "rate random-walk sd, m^3/s"),
    "sampler.log_sigma_step": (0.05, "log noise-scale random-walk sd"),
    "sampler.bias_step": (0.5, "wind-bias random-walk sd, degrees"),
    "sampler.log_angle_step": (0.02, "log opening-angle random-walk sd"),
    # report
    "report.match_radius": (1500.0, "distance within which an estimate matches a true source, m"),
    "report.threshold": (0.0, "map cells at or below this rate are empty, m^3/s"),
}


def _parse(key: str, text: str):
    default = DEFAULTS[key][0]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            kind = type(default[0])
            parts = tuple(kind(p) for p in text.split(","))
            if len(parts) != len(default):
                raise ValueError(f"expected {len(default)} values")
            return parts
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None


class RunConfig(dict):
    """Mapping of every dotted key to its value; unknown keys are rejected."""

    def __init__(self, overrides=None):
        super().__init__((k, v[0]) for k, v in DEFAULTS.items())
        for k, v in (overrides or {}).items():
            self[k] = v

    def __setitem__(self, key, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        super().__setitem__(key, _parse(key, value) if isinstance(value, str) else value)

    def section(self, prefix: str) -> dict:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.items() if k.startswith(p)}

    @staticmethod
    def auto(value) -> bool:
        return isinstance(value, float) and math.isnan(value)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        cfg = cls()
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (p.strip() for p in line.split("=", 1))
            try:
                cfg[key] = value
            except ConfigError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
        return cfg

    def dumps(self) -> str:
        def fmt(v):
            return ",".join(map(str, v)) if isinstance(v, tuple) else str(v).lower() if isinstance(v, bool) else str(v)
        return "".join(f"{k}={fmt(v)}\n" for k, v in self.items())


def describe() -> str:
    """Every key with its default, for ``--help``."""
    lines = []
    for k, (v, h) in DEFAULTS.items():
        shown = ",".join(map(str, v)) if isinstance(v, tuple) else v
        lines.append(f"  {k}={shown}  ({h})")
    return "\n".join(lines)
