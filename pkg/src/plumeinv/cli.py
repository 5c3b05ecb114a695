"""Command line entry point: simulate, optimize, infer and report.

Every subcommand reads and writes plain files under ``--out``. Exit status is
0 on success, 2 on usage errors and 1 on runtime failures; failures also print
a one-line JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .background import ChebySpec, build_cheby_background, build_mrf_background
from .config import ConfigError, RunConfig, describe
from .optimizer import OptimizerConfig, SourceGrid, solve
from .plume import PlumeForward, PlumeGeometry
from .sampler import (ChainAborted, ChainConfig, ChainTrace, Posterior, Priors, ProposalScales, Switches,
                      initial_state, make_state, run_chain, summarize)
from .synth import FlareSpec, ScenarioSpec, flare_scenario, generate, score

log = logging.getLogger("plumeinv")


class UsageError(Exception):
    """Missing inputs or inconsistent options."""


# -- shared builders -----------------------------------------------------------
def _truth_meta(out: Path) -> dict:
    p = out / "truth.json"
    return json.loads(p.read_text()) if p.exists() else {}


def _survey(args, out: Path):
    path = Path(args.survey) if args.survey else out / "survey.csv"
    if not path.exists():
        raise UsageError(f"survey file {path} not found (run simulate or pass --survey)")
    return io.ingest_survey(path)


def _geometry(cfg: RunConfig, meta: dict, bias_deg: float = 0.0) -> tuple[PlumeGeometry, float]:
    depth = cfg["plume.abl_depth"]
    if cfg.auto(depth):
        depth = meta.get("abl_depth_m", 400.0)
    height = cfg["plume.source_height"]
    if cfg.auto(height):
        height = meta.get("source_height_m", 0.0)
    geom = PlumeGeometry(np.deg2rad(cfg["plume.opening_angle_h"]), np.deg2rad(cfg["plume.opening_angle_v"]),
                         float(depth), float(np.deg2rad(bias_deg)), cfg["plume.image_terms"])
    return geom, float(height)


def _grid(cfg: RunConfig, survey, meta: dict) -> SourceGrid:
    cell = cfg["grid.cell_size"]
    bounds = [cfg[f"grid.{k}"] for k in ("x_min", "y_min", "x_max", "y_max")]
    if any(cfg.auto(b) for b in bounds):
        if "domain" in meta:
            auto = meta["domain"]
        else:
            pad = cfg["grid.margin"]
            lo = survey.positions[:, :2].min(axis=0) - pad
            hi = survey.positions[:, :2].max(axis=0) + pad
            auto = [lo[0], lo[1], hi[0], hi[1]]
        bounds = [a if cfg.auto(b) else b for a, b in zip(auto, bounds)]
    x0, y0, x1, y1 = map(float, bounds)
    if not (x1 > x0 and y1 > y0):
        raise UsageError("grid bounds are empty")
    nx = max(1, int(np.ceil((x1 - x0) / cell - 1e-9)))
    ny = max(1, int(np.ceil((y1 - y0) / cell - 1e-9)))
    return SourceGrid((x0, y0), cell, nx, ny)


def _background(cfg: RunConfig, survey):
    b0 = None if cfg.auto(cfg["background.beta0"]) else cfg["background.beta0"]
    if cfg["background.kind"] == "mrf":
        return build_mrf_background(survey, cfg["background.c_t"], cfg["background.c_d"], cfg["background.mu"], b0)
    if cfg["background.kind"] == "chebyshev":
        spec = ChebySpec.from_survey(survey, cfg["background.degrees"], cfg["background.mu1"],
                                     cfg["background.mu2"], cfg["background.mu3"], b0)
        return build_cheby_background(survey, spec, cfg["background.mu"])
    raise UsageError(f"unknown background.kind {cfg['background.kind']!r}")


def _optimizer_config(cfg: RunConfig) -> OptimizerConfig:
    opt = cfg.section("optimizer")
    return OptimizerConfig(sigma=opt["sigma"], lam=None if cfg.auto(opt["lam"]) else opt["lam"],
                           lam_fraction=opt["lam_fraction"], tau=None if cfg.auto(opt["tau"]) else opt["tau"],
                           s_max=opt["s_max"], max_outer=opt["max_outer"], tol=opt["tol"])


def _scales(cfg: RunConfig) -> ProposalScales:
    s = cfg.section("sampler")
    return ProposalScales(location=s["location_step"], width=s["width_step"], rate=s["rate_step"],
                          log_sigma=s["log_sigma_step"], bias=float(np.deg2rad(s["bias_step"])),
                          log_angle=s["log_angle_step"])


# -- subcommands -------------------------------------------------------------------
def run_simulate(args, cfg: RunConfig, out: Path) -> None:
    syn = cfg.section("synth")
    kind = syn.pop("kind")
    if kind == "random":
        spec = ScenarioSpec(**syn, seed=args.seed)
        survey, truth = generate(spec)
        depth = spec.abl_depth
    elif kind == "flare":
        spec = FlareSpec(wind_bias=cfg["flare.wind_bias"], rate=cfg["flare.rate"], noise=cfg["flare.noise"],
                         seed=args.seed)
        survey, truth = flare_scenario(spec)
        depth = spec.abl_depth
    else:
        raise UsageError(f"unknown synth.kind {kind!r}")
    io.write_survey(out / "survey.csv", survey)
    io.write_truth(out, truth, survey, {"abl_depth_m": depth, "scenario": kind})
    log.info("wrote %d measurements and %d true sources", survey.n, truth.sources.m)


def run_optimize(args, cfg: RunConfig, out: Path) -> None:
    survey = _survey(args, out)
    meta = _truth_meta(out)
    geom, height = _geometry(cfg, meta)
    grid = _grid(cfg, survey, meta)
    bgm = _background(cfg, survey)
    res = solve(survey, grid, bgm, _optimizer_config(cfg), geom, height)
    io.write_grid(out / "optimize_rates.csv", res.grid, res.grid.rates)
    io.write_table(out / "optimize_beta.csv", ("beta",), ((float(b),) for b in res.beta))
    io.write_table(out / "optimize_residuals.csv", ("time_s", "measured_ppb", "background_ppb", "residual_ppb"),
                   zip(survey.times, survey.concentrations, res.background, res.residuals))
    summary = {"lam": res.lam, "converged": res.converged, "objective": res.objective_trace[-1],
               "outer_iterations": res.info.get("outer_iterations"),
               "negative_background": res.negative_background, "background_kind": bgm.kind}
    (out / "optimize.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    log.info("optimizer: %d non-zero cells, total rate %.4g m^3/s", int(np.sum(res.grid.rates > 0)),
             float(res.grid.rates.sum()))


def _chain_job(job):
    posterior, init_args, scales, chain_cfg = job
    rng = np.random.default_rng(chain_cfg.seed)
    kind, payload, kwargs = init_args
    if kind == "grid":
        centers, rates, k, half_width = payload
        state = initial_state(posterior, centers, rates, k, rng, half_width, **kwargs)
    else:
        z, w, s = payload
        state = make_state(posterior, z, w, s, **kwargs)
    try:
        return run_chain(posterior, state, scales, chain_cfg, rng=rng), None
    except ChainAborted as exc:
        return exc.trace, str(exc)


def run_infer(args, cfg: RunConfig, out: Path) -> None:
    survey = _survey(args, out)
    meta = _truth_meta(out)
    s = cfg.section("sampler")
    geom, height = _geometry(cfg, meta, s["init_bias"])
    rates_path = out / "optimize_rates.csv"
    if args.init:
        if not Path(args.init).exists():
            raise UsageError(f"init file {args.init} not found")
        init_sources = io.read_sources(args.init)
        grid = _grid(cfg, survey, meta)
    elif rates_path.exists():
        grid = io.read_grid(rates_path)
        init_sources = None
    else:
        raise UsageError("infer needs optimize output in --out or an explicit --init sources file")
    bgm = _background(cfg, survey)
    beta = None
    beta_path = out / "optimize_beta.csv"
    if beta_path.exists():
        b = np.array([v[0] for _, v in io.read_table(beta_path, ("beta",))])
        if len(b) == bgm.r:
            beta = b
    (x0, x1), (y0, y1) = grid.extent
    priors = Priors((x0, x1), (y0, y1), s["width_max"], s["rate_max"], s["m_max"], s["m_min"])
    switches = Switches(sigma=s["sample_sigma"], background=s["sample_background"], bias=s["sample_bias"],
                        angles=s["sample_angles"])
    posterior = Posterior(PlumeForward(survey, height), survey.concentrations, bgm, priors, switches)
    kwargs = {"beta": beta, "sigma": s["init_sigma"], "geom": geom}
    if init_sources is None:
        hw = grid.cell_size / 2 if cfg.auto(s["init_half_width"]) else s["init_half_width"]
        init = ("grid", (grid.centers(), grid.rates, s["init_k"], hw), kwargs)
    else:
        init = ("sources", (init_sources.locations, init_sources.half_widths, init_sources.rates), kwargs)
    base = ChainConfig(s["iterations"], s["burn_in"], s["thin"], s["audit_every"], seed=args.seed)
    if args.chains == 1:
        seeds = [args.seed]
    else:
        seeds = [int(ss.generate_state(1)[0]) for ss in np.random.SeedSequence(args.seed).spawn(args.chains)]
    jobs = [(posterior, init, _scales(cfg), replace(base, seed=sd)) for sd in seeds]
    if len(jobs) == 1:
        results = [_chain_job(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            results = list(pool.map(_chain_job, jobs))
    trace = ChainTrace.concatenate([t for t, _ in results])
    io.write_trace(out / "trace", trace)
    errors = [e for _, e in results if e]
    if errors:
        raise RuntimeError("; ".join(errors))
    log.info("infer: %d snapshots, median source count %g", len(trace), float(np.median(trace.m)))


def run_report(args, cfg: RunConfig, out: Path) -> None:
    trace_dir = out / "trace"
    if not (trace_dir / "trace_scalars.csv").exists():
        raise UsageError(f"no trace in {trace_dir} (run infer first)")
    survey = _survey(args, out)
    meta = _truth_meta(out)
    trace = io.read_trace(trace_dir)
    rates_path = out / "optimize_rates.csv"
    grid = io.read_grid(rates_path) if rates_path.exists() else _grid(cfg, survey, meta)
    sm = summarize(trace, grid, survey.concentrations)
    for name, values in (("median", sm.median), ("lower", sm.lower), ("upper", sm.upper)):
        io.write_grid(out / f"report_{name}.csv", grid, values)
    io.write_table(out / "report_background.csv", ("time_s", "q025_ppb", "median_ppb", "q975_ppb"),
                   zip(survey.times, *sm.background_bands.T))
    io.write_table(out / "report_residuals.csv", ("time_s", "measured_ppb", "median_residual_ppb"),
                   zip(survey.times, sm.residuals[:, 0], sm.residuals[:, 1]))
    io.write_table(out / "report_acceptance.csv", ("move", "proposed", "accepted", "rate"),
                   [(k, trace.proposed[k], trace.accepted[k], float(v)) for k, v in sm.acceptance.items()])
    io.write_table(out / "report_scalars.csv", ("name", "q025", "median", "q975"),
                   [(k, *map(float, v)) for k, v in sm.scalar_bands.items()])
    if (out / "truth_sources.csv").exists():
        truth = io.read_truth(out)
        rep = score(sm.median, truth, cfg["report.match_radius"], grid=grid, threshold=cfg["report.threshold"])
        record = {"hits": rep.hits, "misses": rep.misses, "spurious": rep.spurious,
                  "matches": [{"true": t, "estimate": e, "distance_m": d, "rate_error": r}
                              for t, e, d, r in rep.matches],
                  "true_wind_bias_deg": float(np.rad2deg(truth.wind_bias)),
                  "background_within_1ppb": float(np.mean(np.abs(sm.background_bands[:, 1] - truth.background) <= 1.0))}
        (out / "report_score.json").write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")
    if args.render:
        _render(out, grid, sm, survey)


def _render(out: Path, grid: SourceGrid, sm, survey) -> None:
    try:
        import matplotlib
    except ImportError as exc:
        raise RuntimeError("--render needs matplotlib") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    (x0, x1), (y0, y1) = grid.extent
    fig, axes = plt.subplots(1, 3, figsize=(13, 4), constrained_layout=True)
    for ax, (title, values) in zip(axes, (("2.5%", sm.lower), ("median", sm.median), ("97.5%", sm.upper))):
        im = ax.imshow(values.reshape(grid.ny, grid.nx), origin="lower", extent=(x0, x1, y0, y1), cmap="viridis")
        ax.plot(survey.positions[:, 0], survey.positions[:, 1], "w-", lw=0.4)
        ax.set_title(f"{title} emission rate (m$^3$/s)")
        fig.colorbar(im, ax=ax, shrink=0.8)
    fig.savefig(out / "report_maps.png", dpi=120, metadata={"Software": None})
    plt.close(fig)
    fig, (a, b) = plt.subplots(1, 2, figsize=(11, 4), constrained_layout=True)
    lo, med, hi = sm.background_bands.T
    a.fill_between(survey.times, lo, hi, alpha=0.4)
    a.plot(survey.times, med, lw=1)
    a.set_xlabel("time (s)")
    a.set_ylabel("background (ppb)")
    b.plot(sm.residuals[:, 0], sm.residuals[:, 1], ".", ms=2)
    b.set_xlabel("measured (ppb)")
    b.set_ylabel("median residual (ppb)")
    fig.savefig(out / "report_diagnostics.png", dpi=120, metadata={"Software": None})
    plt.close(fig)


COMMANDS = {"simulate": run_simulate, "optimize": run_optimize, "infer": run_infer, "report": run_report}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key=value config file")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    common.add_argument("--out", metavar="DIR", default="out", help="working directory for inputs and outputs")
    common.add_argument("--survey", metavar="PATH", help="survey CSV (default OUT/survey.csv)")
    common.add_argument("--chains", type=int, default=1, metavar="K", help="independent chains for infer")
    common.add_argument("--init", metavar="PATH", help="initial sources CSV for infer")
    common.add_argument("--render", action="store_true", help="also write PNG figures (report)")
    common.add_argument("-v", "--verbose", action="store_true")
    epilog = "config keys and defaults:\n" + describe()
    parser = argparse.ArgumentParser(prog="plumeinv", description=__doc__.splitlines()[0], epilog=epilog,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"simulate": "generate a synthetic survey and its ground truth",
             "optimize": "fit a sparse gridded emission map and background",
             "infer": "run the reversible-jump sampler",
             "report": "summarise a trace into maps, bands and diagnostics"}
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text, epilog=epilog,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser


def _error(command, exc, code) -> int:
    record = {"error": type(exc).__name__, "message": str(exc), "command": command, "exit_code": code}
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            cfg[key.strip()] = value
        if args.chains < 1:
            raise UsageError("--chains must be >= 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg, out)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        return _error(args.command, exc, 2)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        return _error(args.command, exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
