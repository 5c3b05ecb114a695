"""End-to-end acceptance suite: one test per criterion, each reporting a pass/fail line."""

import filecmp
import time
from dataclasses import replace

import cvxpy as cp
import numpy as np
import pytest
from scipy import stats

from plumeinv.background import BackgroundModel, assemble_mrf_precision, build_mrf_background, cheby_table, mrf_spec
from plumeinv.cli import main
from plumeinv.optimizer import OptimizerConfig, QuadraticProblem, SourceGrid, alternate, objective, solve
from plumeinv.plume import PlumeForward, PlumeGeometry
from plumeinv.sampler import (ChainConfig, Posterior, Priors, ProposalScales, Switches, initial_state, make_state,
                              run_chain, summarize)
from plumeinv.synth import FlareSpec, ScenarioSpec, flare_scenario, generate, score
from conftest import make_zigzag
from test_background import naive_alpha
from test_plume import crosswind_flux
from toys import ZeroForward, batch_means_se, enumerate_lattice, lattice_posterior, lattice_scales, state_key

MH_BLOCKS = ("locations", "widths", "rates", "sigma", "bias")


@pytest.fixture(scope="module")
def recovery():
    """Default synthetic scenario: optimise on 1 km cells, then 5000 sampler iterations."""
    t0 = time.time()
    survey, truth = generate(ScenarioSpec(seed=0))
    grid = SourceGrid((0.0, 0.0), 1000.0, 40, 40)
    bgm = build_mrf_background(survey)
    fit = solve(survey, grid, bgm, OptimizerConfig())
    priors = Priors((0.0, 40000.0), (0.0, 40000.0), m_max=30)
    posterior = Posterior(PlumeForward(survey), survey.concentrations, bgm, priors)
    rng = np.random.default_rng(0)
    init = initial_state(posterior, grid.centers(), fit.grid.rates, 15, rng, grid.cell_size / 2, beta=fit.beta,
                         sigma=3.0)
    trace = run_chain(posterior, init, ProposalScales(), ChainConfig(iterations=5000, burn_in=1500, seed=0), rng=rng)
    return survey, truth, grid, trace, summarize(trace, grid, survey.concentrations), time.time() - t0


def test_criterion_1_source_recovery(recovery, criterion):
    _, truth, grid, trace, sm, elapsed = recovery
    rep = score(sm.median, truth, 1500.0, grid=grid)
    good = [m for m in rep.matches if m[3] <= 0.5]
    worst = max(rep.rate_errors, default=np.nan)
    criterion(1, "synthetic source recovery", len(good) >= 8 and elapsed <= 1800,
              f"{len(good)}/10 sources within 1.5 km at rate error <= 50% (worst {worst:.2f}), "
              f"{rep.spurious} spurious, {elapsed:.0f} s")


def test_criterion_2_background_accuracy(recovery, criterion):
    _, truth, _, _, sm, _ = recovery
    frac = float(np.mean(np.abs(sm.background_bands[:, 1] - truth.background) <= 1.0))
    criterion(2, "background accuracy", frac >= 0.95, f"{100 * frac:.1f}% of times within 1 ppb of 1800 ppb")


def test_block_acceptance_rates_are_proper(recovery):
    trace = recovery[3]
    for block in MH_BLOCKS:
        assert 0 < trace.accepted[block] < trace.proposed[block], block


def test_criterion_3_wind_bias_recovery(criterion):
    t0 = time.time()
    spec = FlareSpec(seed=0)
    survey, truth = flare_scenario(spec)
    geom = PlumeGeometry(abl_depth=spec.abl_depth)
    grid = SourceGrid((0.0, 0.0), 300.0, 50, 50)
    bgm = build_mrf_background(survey)
    fit = solve(survey, grid, bgm, OptimizerConfig(), geom, spec.source_height)
    priors = Priors((0.0, spec.width), (0.0, spec.height), m_max=10)
    posterior = Posterior(PlumeForward(survey, spec.source_height), survey.concentrations, bgm, priors)
    rng = np.random.default_rng(0)
    init = initial_state(posterior, grid.centers(), fit.grid.rates, 5, rng, 150.0, beta=fit.beta, sigma=3.0,
                         geom=geom)
    trace = run_chain(posterior, init, ProposalScales(), ChainConfig(iterations=30000, burn_in=10000, seed=0), rng=rng)
    lo, hi = np.rad2deg(np.quantile(trace.bias, [0.025, 0.975]))
    elapsed = time.time() - t0
    ok = lo <= -18.0 <= hi and hi - lo <= 2.0 and elapsed <= 600
    criterion(3, "wind-bias recovery", ok, f"95% interval [{lo:.2f}, {hi:.2f}] deg (width {hi - lo:.2f}), "
              f"started at 0 deg, {elapsed:.0f} s")


def test_criterion_4_optimizer_matches_qp_reference(criterion):
    tight = OptimizerConfig(sigma=1.0, lam_fraction=0.1, s_max=0.8, max_outer=20000, tol=1e-15,
                            source_tol=1e-13, source_max_iter=20000)
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n, m, r = int(rng.integers(8, 21)), int(rng.integers(2, 10)), int(rng.integers(1, 6))
        A = rng.uniform(0, 20, (n, m)) * (rng.random((n, m)) < 0.6)
        P = np.column_stack([np.ones(n), rng.normal(size=(n, r - 1))])
        L = rng.normal(size=(r, r))
        J = L @ L.T + 0.1 * np.eye(r)
        beta0 = rng.normal(size=r)
        y = A @ (rng.uniform(0, 1, m) * (rng.random(m) < 0.5)) + P @ beta0 + rng.normal(0, 1, n)
        cfg = replace(tight, tau=float(rng.choice([0.2, 1.0, 5.0])))
        prob = QuadraticProblem.build(A, P, y, J, beta0, cfg)
        s, beta, _, _ = alternate(prob, cfg)
        got = objective(s, beta, prob)

        sv, bv = cp.Variable(m), cp.Variable(r)
        chol = np.linalg.cholesky(J)
        ref = cp.Problem(cp.Minimize(0.5 * cp.sum_squares(A @ sv + P @ bv - y)
                                     + 0.5 * prob.mu * cp.sum_squares(chol.T @ (bv - beta0))
                                     + prob.lam * cp.sum(cp.multiply(prob.q, sv))),
                         [sv >= 0, sv <= cfg.s_max, P @ bv <= y + cfg.tau])
        ref.solve(solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
        assert np.all(P @ beta <= y + cfg.tau + 1e-9)
        worst = max(worst, abs(got - ref.value) / abs(ref.value))
    criterion(4, "optimizer oracle equivalence", worst <= 1e-6, f"worst relative objective gap {worst:.1e} over 20")


def test_criterion_5_flux_conservation(criterion):
    errors = []
    for height in (0.0, 50.0):
        for ratio in (0.1, 1.0, 5.0):
            dr = ratio * 400.0 / np.tan(np.deg2rad(12.7))
            errors.append(abs(crosswind_flux(dr, height) - 1.0))
    criterion(5, "plume flux conservation", max(errors) <= 1e-3, f"worst |flux - 1| = {max(errors):.1e}")


def test_criterion_6_rjmcmc_matches_enumeration(criterion):
    want = enumerate_lattice(1, 2, 3)
    post = lattice_posterior(1, 2, 3)
    init = make_state(post, [[0.5, 0.5]], [0.5], [1.0], sigma=1.0)
    trace = run_chain(post, init, lattice_scales(), ChainConfig(iterations=200000, burn_in=2000, seed=11,
                                                                audit_every=10000))
    keys = [state_key(p) for p in trace.sources]
    worst = 0.0
    for m in (1, 2):
        hits = np.array([k[0] == m for k in keys], dtype=float)
        p = sum(v for k, v in want.items() if k[0] == m)
        worst = max(worst, abs(hits.mean() - p) / batch_means_se(hits))
    for key, p in want.items():
        hits = np.array([k == key for k in keys], dtype=float)
        worst = max(worst, abs(hits.mean() - p) / batch_means_se(hits))
    criterion(6, "RJMCMC enumeration oracle", worst <= 3.0,
              f"worst deviation {worst:.2f} MC standard errors over 2 models and {len(want)} lattice states")


def test_criterion_7_prior_recovery(criterion):
    priors = Priors((0.0, 1000.0), (-500.0, 500.0), width_max=50.0, rate_max=2.0, m_max=4)
    post = Posterior(ZeroForward(3), np.zeros(3), None, priors,
                     Switches(sigma=False, background=False, likelihood=False))
    scales = ProposalScales(location=400.0, width=25.0, rate=1.0, bias=2.0)
    init = make_state(post, [[500.0, 0.0]], [10.0], [1.0], sigma=1.0)
    trace = run_chain(post, init, scales, ChainConfig(iterations=100000, burn_in=1000, thin=50, seed=7,
                                                      audit_every=0))
    rng = np.random.default_rng(0)
    picks = np.array([p[rng.integers(len(p))] for p in trace.sources if len(p)])
    bias = np.asarray(trace.bias)
    tests = {"x": stats.kstest(picks[:, 0], "uniform", args=(0.0, 1000.0)),
             "y": stats.kstest(picks[:, 1], "uniform", args=(-500.0, 1000.0)),
             "w": stats.kstest(picks[:, 2], "uniform", args=(0.0, 50.0)),
             "s": stats.kstest(picks[:, 3], "uniform", args=(0.0, 2.0)),
             "omega": stats.kstest(bias, "uniform", args=(-np.pi, 2 * np.pi))}
    m_counts = np.bincount(trace.m, minlength=5)
    m_test = stats.chisquare(m_counts)
    worst = min(min(t.pvalue for t in tests.values()), m_test.pvalue)
    detail = ", ".join(f"{k} p={t.pvalue:.2f}" for k, t in tests.items()) + f", m p={m_test.pvalue:.2f}"
    criterion(7, "prior recovery", worst > 0.01, f"{len(picks)} draws; {detail}")


def test_criterion_8_gibbs_conditional(criterion):
    n = 6
    rng = np.random.default_rng(21)
    P = np.column_stack([np.ones(n), np.linspace(-1.0, 1.0, n)])
    J = np.array([[2.0, 0.5], [0.5, 1.0]])
    beta0 = np.array([1800.0, 3.0])
    mu, sigma = 0.7, 1.5
    y = P @ np.array([1801.0, 2.0]) + rng.normal(0, 1, n)
    post = Posterior(ZeroForward(n), y, BackgroundModel(P, beta0, J, mu, "chebyshev"),
                     Priors((0.0, 1.0), (0.0, 1.0), m_max=0))
    state = make_state(post, np.zeros((0, 2)), [], [], sigma=sigma)
    prec = P.T @ P / sigma ** 2 + mu * J
    cov = np.linalg.inv(prec)
    mean = cov @ (P.T @ y / sigma ** 2 + mu * J @ beta0)
    draws = np.array([post.draw_background(state, rng) for _ in range(100000)])
    N = len(draws)
    z_mean = np.abs(draws.mean(axis=0) - mean) / np.sqrt(np.diag(cov) / N)
    emp = np.cov(draws.T)
    se_cov = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov ** 2) / N)
    z_cov = np.abs(emp - cov) / se_cov
    worst = max(z_mean.max(), z_cov.max())
    criterion(8, "Gibbs background conditional", worst <= 3.0,
              f"worst deviation {worst:.2f} standard errors over 2 means and 3 covariances")


SMALL = ["--set", "synth.width=8000", "--set", "synth.height=8000", "--set", "synth.n_sources=3",
         "--set", "synth.duration=1200", "--set", "synth.pass_spacing=2000", "--set", "sampler.iterations=300",
         "--set", "sampler.burn_in=100", "--set", "sampler.init_k=4", "--set", "optimizer.max_outer=30"]


def test_criterion_9_determinism(tmp_path, criterion):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        for cmd in ("simulate", "optimize", "infer", "report"):
            assert main([cmd, "--out", str(d), "--seed", "5", *SMALL]) == 0
    names = sorted(p.relative_to(dirs[0]).as_posix() for p in dirs[0].rglob("*") if p.is_file())
    other = sorted(p.relative_to(dirs[1]).as_posix() for p in dirs[1].rglob("*") if p.is_file())
    same = [n for n in names if filecmp.cmp(dirs[0] / n, dirs[1] / n, shallow=False)]
    ok = names == other and len(same) == len(names) and any(n.startswith("trace/") for n in names)
    criterion(9, "determinism", ok, f"{len(same)}/{len(names)} output files byte-identical")


def test_criterion_10_mrf_identity_and_chebyshev(criterion):
    survey = make_zigzag(50, seed=int(np.random.default_rng(99).integers(1000)))
    spec = mrf_spec(survey)
    J = assemble_mrf_precision(spec, survey)
    rng = np.random.default_rng(1)
    worst_mrf = 0.0
    for _ in range(100):
        x = rng.normal(1800.0, 20.0, survey.n)
        want = sum(naive_alpha(survey, i, j, k, spec.c_t, spec.c_d) * (x[i] - x[j]) ** 2 for i, j, k in spec.edges)
        worst_mrf = max(worst_mrf, abs(x @ (J @ x) - want) / want)
    theta = np.linspace(0.01, np.pi - 0.01, 997)
    values, _, _ = cheby_table(10, np.cos(theta))
    closed = np.sin(np.outer(theta, np.arange(1, 12))) / np.sin(theta)[:, None]
    worst_cheb = float(np.abs(values - closed).max())
    ok = worst_mrf <= 1e-12 and worst_cheb <= 1e-12
    criterion(10, "MRF identity and Chebyshev recurrence", ok,
              f"MRF relative error {worst_mrf:.1e} over {len(spec.edges)} links, Chebyshev error {worst_cheb:.1e}")
