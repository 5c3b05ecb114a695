import numpy as np
import pytest
from scipy import sparse

from plumeinv.optimizer import (OptimizerConfig, QuadraticProblem, SourceGrid, alternate, lambda_max, objective,
                                psi, solve, solve_sources)

TIGHT = OptimizerConfig(max_outer=5000, tol=1e-15, source_tol=1e-12, source_max_iter=20000)


def random_problem(seed, n=15, m=6, r=3, lam=None, tau=None, s_max=10.0):
    rng = np.random.default_rng(seed)
    A = rng.uniform(0, 20, (n, m)) * (rng.random((n, m)) < 0.6)
    P = rng.normal(size=(n, r))
    L = rng.normal(size=(r, r))
    J = L @ L.T + 0.1 * np.eye(r)
    beta0 = rng.normal(size=r)
    y = A @ rng.uniform(0, 1, m) + P @ beta0 + rng.normal(0, 1, n)
    cfg = OptimizerConfig(sigma=1.0, lam=lam, tau=tau, s_max=s_max, max_outer=5000, tol=1e-15,
                          source_tol=1e-12, source_max_iter=20000)
    return QuadraticProblem.build(A, P, y, J, beta0, cfg), cfg


def test_psi_is_continuous_at_the_branch_point():
    for eta in (0.1, 1.0, 7.0):
        b = 1.3
        a = eta * b
        assert psi(a - 1e-12, b, eta) == pytest.approx(psi(a + 1e-12, b, eta), abs=1e-9)


def test_unconstrained_case_matches_normal_equations():
    # interior solution, no sparsity, no active bounds: stationary point of a plain quadratic
    rng = np.random.default_rng(1)
    n, m, r = 30, 4, 2
    A = rng.uniform(1, 10, (n, m))
    P = np.column_stack([np.ones(n), np.linspace(-1, 1, n)])
    J = np.array([[2.0, 0.3], [0.3, 1.0]])
    beta0 = np.array([10.0, 1.0])
    s_true = np.array([0.5, 1.0, 1.5, 2.0])
    y = A @ s_true + P @ beta0 + rng.normal(0, 0.01, n)
    cfg = OptimizerConfig(sigma=1.0, lam=0.0, tau=1e6, max_outer=5000, tol=1e-15, source_tol=1e-13,
                          source_max_iter=50000)
    p = QuadraticProblem.build(A, P, y, J, beta0, cfg, mu=1.0)
    s, beta, _, converged = alternate(p, cfg)
    M = np.block([[A.T @ A, A.T @ P], [P.T @ A, P.T @ P + J]])
    rhs = np.concatenate([A.T @ y, P.T @ y + J @ beta0])
    x = np.linalg.solve(M, rhs)
    assert converged
    assert np.all(x[:m] > 0)
    np.testing.assert_allclose(s, x[:m], atol=1e-6)
    np.testing.assert_allclose(beta, x[m:], atol=1e-6)


def test_lambda_max_switches_sources_off():
    p, cfg = random_problem(2)
    lm = lambda_max(p.A, p.P, p.y, p.beta0, p.sigma, p.q)
    assert lm > 0
    above = QuadraticProblem(**{**p.__dict__, "lam": 1.01 * lm})
    res = solve_sources(p.beta0, np.zeros(p.A.shape[1]), above, cfg)
    np.testing.assert_array_equal(res.value, 0.0)
    below = QuadraticProblem(**{**p.__dict__, "lam": 0.9 * lm})
    assert solve_sources(p.beta0, np.zeros(p.A.shape[1]), below, cfg).value.max() > 0


@pytest.mark.parametrize("seed", range(5))
def test_objective_never_increases_and_bounds_hold(seed):
    p, cfg = random_problem(seed, tau=0.5)
    s, beta, trace, _ = alternate(p, cfg)
    assert np.all(np.diff(trace) <= 1e-12 * np.abs(trace[:-1]).max())
    assert np.all((s >= 0) & (s <= p.s_max))
    assert np.all(p.P @ beta <= p.y + p.tau + 1e-6)
    assert trace[-1] == pytest.approx(objective(s, beta, p))


def test_kkt_conditions_for_sources():
    p, cfg = random_problem(7)
    s, beta, _, _ = alternate(p, cfg)
    g = p.A.T @ (p.A @ s + p.P @ beta - p.y) / p.sigma ** 2 + p.lam * p.q
    interior = (s > 1e-9) & (s < p.s_max - 1e-9)
    np.testing.assert_allclose(g[interior], 0.0, atol=1e-5)
    assert np.all(g[s <= 1e-9] >= -1e-5)


def test_source_grid_layout():
    g = SourceGrid((100.0, 200.0), 50.0, 3, 2)
    c = g.centers()
    np.testing.assert_allclose(c[:3], [[125, 225], [175, 225], [225, 225]])
    np.testing.assert_allclose(c[3], [125, 275])
    np.testing.assert_array_equal(g.cell_index([[130, 260], [99, 210], [240, 299]]), [3, -1, 5])
    assert g.extent == ((100.0, 250.0), (200.0, 300.0))
    assert np.all(g.sources().half_widths == 25.0)


def test_solve_end_to_end_on_small_scene():
    from plumeinv.background import build_mrf_background
    from plumeinv.synth import ScenarioSpec, generate
    spec = ScenarioSpec(width=6000.0, height=6000.0, n_sources=1, duration=600.0, pass_spacing=1000.0, seed=4)
    survey, truth = generate(spec)
    grid = SourceGrid((0.0, 0.0), 1000.0, 6, 6)
    res = solve(survey, grid, build_mrf_background(survey), OptimizerConfig())
    assert res.converged
    assert res.residuals.shape == (survey.n,)
    best = res.grid.centers()[np.argmax(res.grid.rates)]
    assert np.hypot(*(best - truth.sources.locations[0])) < 1500.0
