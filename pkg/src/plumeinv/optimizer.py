"""Initial point estimate of gridded emission rates and background.

Minimises

    1/(2 sigma^2) ||A s + P beta - y||^2 + mu/2 (beta - beta0)' J (beta - beta0) + lam ||Q s||_1

subject to 0 <= s <= s_max and P beta <= y + tau, by alternating between a
background step (augmented Lagrangian with Newton inner solves) and a source
step (accelerated projected gradient on the Lipschitz majoriser).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .background import BackgroundModel
from .core import SourceSet, Survey
from .plume import PlumeGeometry, build_matrix

log = logging.getLogger(__name__)


class ConvergenceWarning(UserWarning):
    """An iterative solver stopped at its iteration cap."""


@dataclass(frozen=True)
class SourceGrid:
    """Regular grid of candidate ground sources.

    Cells are ordered row-major with the east index varying fastest.
    """

    origin: tuple[float, float]
    cell_size: float
    nx: int
    ny: int
    rates: np.ndarray = None

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be > 0")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one cell")
        if self.rates is None:
            object.__setattr__(self, "rates", np.zeros(self.nx * self.ny))
        else:
            rates = np.asarray(self.rates, dtype=float).ravel()
            if rates.size != self.nx * self.ny:
                raise ValueError("rates do not match grid size")
            object.__setattr__(self, "rates", rates)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def extent(self):
        x0, y0 = self.origin
        return (x0, x0 + self.nx * self.cell_size), (y0, y0 + self.ny * self.cell_size)

    def centers(self) -> np.ndarray:
        x0, y0 = self.origin
        xs = x0 + (np.arange(self.nx) + 0.5) * self.cell_size
        ys = y0 + (np.arange(self.ny) + 0.5) * self.cell_size
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def cell_index(self, xy) -> np.ndarray:
        """Flat cell index for each point, -1 outside the grid."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        ix = np.floor((xy[:, 0] - self.origin[0]) / self.cell_size).astype(int)
        iy = np.floor((xy[:, 1] - self.origin[1]) / self.cell_size).astype(int)
        inside = (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny)
        return np.where(inside, iy * self.nx + ix, -1)

    def sources(self, height: float = 0.0) -> SourceSet:
        c = self.centers()
        return SourceSet.from_arrays(c, np.full(len(c), self.cell_size / 2), self.rates, height)

    def with_rates(self, rates) -> "SourceGrid":
        return replace(self, rates=np.asarray(rates, dtype=float))


@dataclass(frozen=True)
class OptimizerConfig:
    """Tuning of the initial optimisation.

    ``lam=None`` selects ``lam_fraction`` times the smallest sparsity weight for
    which s = 0 is optimal at beta = beta0. ``tau=None`` means 3 sigma and
    ``mu=None`` takes the background model's weight.
    """

    sigma: float = 3.0
    mu: float = None
    lam: float = None
    lam_fraction: float = 0.02
    q: np.ndarray = None
    tau: float = None
    s_max: float = 10.0
    eta: float = 1.0
    max_outer: int = 200
    tol: float = 1e-8
    background_max_iter: int = 50
    newton_max_iter: int = 50
    feasibility_tol: float = 1e-8
    source_max_iter: int = 2000
    source_tol: float = 1e-8

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        for name in ("mu", "lam", "tau"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.s_max <= 0 or self.eta <= 0:
            raise ValueError("s_max and eta must be > 0")


@dataclass
class QuadraticProblem:
    """Arrays of one optimisation instance. ``A`` is in ppb per (m^3/s)."""

    A: np.ndarray
    P: object
    y: np.ndarray
    J: object
    beta0: np.ndarray
    sigma: float
    mu: float
    lam: float
    q: np.ndarray
    tau: float
    s_max: float

    @classmethod
    def build(cls, A, P, y, J, beta0, config: OptimizerConfig, mu=None) -> "QuadraticProblem":
        A = np.asarray(A, dtype=float)
        y = np.asarray(y, dtype=float)
        beta0 = np.asarray(beta0, dtype=float)
        q = np.ones(A.shape[1]) if config.q is None else np.asarray(config.q, dtype=float)
        if np.any(q < 0):
            raise ValueError("q must be non-negative")
        mu = config.mu if config.mu is not None else (1.0 if mu is None else mu)
        tau = 3.0 * config.sigma if config.tau is None else config.tau
        lam = config.lam
        if lam is None:
            lam = config.lam_fraction * lambda_max(A, P, y, beta0, config.sigma, q)
        return cls(A, P, y, J, beta0, config.sigma, float(mu), float(lam), q, float(tau), config.s_max)

    def background(self, beta) -> np.ndarray:
        return np.asarray(self.P @ beta).ravel()


def lambda_max(A, P, y, beta0, sigma, q) -> float:
    """Smallest sparsity weight making s = 0 stationary at beta = beta0."""
    r = y - np.asarray(P @ beta0).ravel()
    g = A.T @ r / sigma ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(q > 0, g / q, 0.0)
    return float(max(ratio.max(initial=0.0), 0.0))


def objective(s, beta, problem: QuadraticProblem) -> float:
    """Value of the regularised least-squares objective."""
    p = problem
    s = np.asarray(s, dtype=float)
    beta = np.asarray(beta, dtype=float)
    resid = p.A @ s + p.background(beta) - p.y
    d = beta - p.beta0
    return float(0.5 * resid @ resid / p.sigma ** 2 + 0.5 * p.mu * d @ (p.J @ d)
                 + p.lam * np.sum(np.abs(p.q * s)))


def psi(a, b, eta):
    """Augmented-Lagrangian term for one inequality with value a and multiplier b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    first = a - eta * b <= 0
    out = np.where(first, -b * a + a * a / (2.0 * eta), -0.5 * eta * b * b)
    return out if out.ndim else float(out)


def _psi_slope(c, z, eta):
    active = c - eta * z <= 0
    return np.where(active, -z + c / eta, 0.0), active


@dataclass
class StepResult:
    value: np.ndarray
    converged: bool
    iterations: int
    measure: float = 0.0


def _solve(H, g):
    if sparse.issparse(H):
        return spsolve(H.tocsc(), g)
    try:
        return np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(H, g, rcond=None)[0]


def solve_background(s, beta, problem: QuadraticProblem, config: OptimizerConfig = OptimizerConfig()) -> StepResult:
    """Minimise over beta with s fixed, subject to P beta <= y + tau.

    The inequality c(beta) = y + tau - P beta >= 0 is handled with an augmented
    Lagrangian: each slack w >= 0 is kept at its projection max(0, c - eta z),
    which leaves the piecewise-quadratic psi term in beta. The inner problem is
    solved by Newton steps on the current branch pattern with an Armijo line
    search; multipliers follow z <- max(0, z - c / eta) and the penalty 1/eta is
    raised tenfold whenever the violation fails to halve.
    """
    p = problem
    P = p.P
    d = p.y - p.A @ np.asarray(s, dtype=float)
    upper = p.y + p.tau
    dense_P = not sparse.issparse(P)
    PtP = P.T @ P
    Ptd = np.asarray(P.T @ d).ravel()
    inv_s2 = 1.0 / p.sigma ** 2
    base_H = inv_s2 * PtP + p.mu * p.J
    if sparse.issparse(base_H) and dense_P:
        base_H = base_H.toarray()
    Jb0 = np.asarray(p.J @ p.beta0).ravel()

    def lagrangian(b, z, eta):
        pb = np.asarray(P @ b).ravel()
        r = pb - d
        db = b - p.beta0
        return 0.5 * inv_s2 * r @ r + 0.5 * p.mu * db @ (p.J @ db) + np.sum(psi(upper - pb, z, eta))

    def inner(b, z, eta):
        for it in range(config.newton_max_iter):
            c = upper - np.asarray(P @ b).ravel()
            slope, active = _psi_slope(c, z, eta)
            grad = inv_s2 * (np.asarray(PtP @ b).ravel() - Ptd) + p.mu * (np.asarray(p.J @ b).ravel() - Jb0) \
                - np.asarray(P.T @ slope).ravel()
            gscale = max(1.0, np.abs(inv_s2 * Ptd).max(initial=0.0))
            if np.abs(grad).max() <= 1e-12 * gscale:
                return b, True
            if dense_P:
                Pa = P[active]
                H = base_H + (Pa.T @ Pa) / eta
            else:
                Pa = P[np.flatnonzero(active)]
                H = base_H + (Pa.T @ Pa) / eta
            step = -_solve(H, grad)
            f0 = lagrangian(b, z, eta)
            slope0 = grad @ step
            t = 1.0
            while t > 1e-12:
                cand = b + t * step
                if lagrangian(cand, z, eta) <= f0 + 1e-4 * t * slope0 + 1e-14 * abs(f0):
                    break
                t *= 0.5
            new_c = upper - np.asarray(P @ cand).ravel()
            same = np.array_equal(new_c - eta * z <= 0, active)
            b = cand
            if t == 1.0 and same:
                return b, True
        return b, False

    b = np.asarray(beta, dtype=float).copy()
    z = np.zeros(len(d))
    eta = config.eta
    prev_violation = np.inf
    violation = np.inf
    for it in range(1, config.background_max_iter + 1):
        b, _ = inner(b, z, eta)
        c = upper - np.asarray(P @ b).ravel()
        violation = float(np.maximum(-c, 0.0).max(initial=0.0))
        z_new = np.maximum(z - c / eta, 0.0)
        dz = float(np.abs(z_new - z).max(initial=0.0))
        z = z_new
        if violation <= config.feasibility_tol and dz <= 1e-10 * (1.0 + z.max(initial=0.0)):
            return StepResult(b, True, it, violation)
        if violation > 0.5 * prev_violation:
            eta /= 10.0
        prev_violation = violation
    warnings.warn(f"background step stopped after {config.background_max_iter} iterations "
                  f"(violation {violation:.2e})", ConvergenceWarning, stacklevel=2)
    return StepResult(b, False, config.background_max_iter, violation)


def operator_norm_sq(A, iters: int = 100, seed: int = 0) -> float:
    """Largest eigenvalue of A'A by power iteration (slightly inflated for safety)."""
    if A.shape[1] == 0:
        return 0.0
    if A.shape[1] <= 200:
        return float(np.linalg.norm(A, 2) ** 2)
    v = np.random.default_rng(seed).standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = A.T @ (A @ v)
        lam_new = float(np.linalg.norm(w))
        if lam_new == 0:
            return 0.0
        v = w / lam_new
        if abs(lam_new - lam) <= 1e-6 * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return 1.01 * lam


def solve_sources(beta, s, problem: QuadraticProblem, config: OptimizerConfig = OptimizerConfig(),
                  lipschitz: float = None) -> StepResult:
    """Minimise over 0 <= s <= s_max with beta fixed.

    Projected gradient steps on the quadratic majoriser with curvature L = ||A||^2
    / sigma^2, accelerated with Nesterov extrapolation and restarted whenever the
    objective goes up. The l1 term is linear on the feasible box.
    """
    p = problem
    A = p.A
    m = A.shape[1]
    if m == 0:
        return StepResult(np.zeros(0), True, 0, 0.0)
    inv_s2 = 1.0 / p.sigma ** 2
    r0 = p.y - p.background(beta)
    lin = p.lam * p.q
    L = (operator_norm_sq(A) if lipschitz is None else lipschitz) * inv_s2
    if L <= 0:
        x = np.where(lin > 0, 0.0, np.where(lin < 0, p.s_max, np.clip(s, 0, p.s_max)))
        return StepResult(x, True, 0, 0.0)

    def fval(ax, x):
        r = ax - r0
        return 0.5 * inv_s2 * r @ r + lin @ x

    def grad_from(ax):
        return inv_s2 * (A.T @ (ax - r0)) + lin

    x = np.clip(np.asarray(s, dtype=float), 0.0, p.s_max)
    ax = A @ x
    fx = fval(ax, x)
    scale = max(1.0, np.abs(grad_from(np.zeros(len(r0)))).max())
    yv, ay, t = x.copy(), ax.copy(), 1.0
    measure = np.inf
    for it in range(1, config.source_max_iter + 1):
        g = grad_from(ay)
        x_new = np.clip(yv - g / L, 0.0, p.s_max)
        ax_new = A @ x_new
        f_new = fval(ax_new, x_new)
        if f_new > fx:
            # restart from the last accepted point
            yv, ay, t = x.copy(), ax.copy(), 1.0
            g = grad_from(ax)
            x_new = np.clip(x - g / L, 0.0, p.s_max)
            ax_new = A @ x_new
            f_new = fval(ax_new, x_new)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        mom = (t - 1.0) / t_new
        yv = x_new + mom * (x_new - x)
        ay = ax_new + mom * (ax_new - ax)
        x, ax, t = x_new, ax_new, t_new
        fx = f_new
        if it % 5 == 0 or it == config.source_max_iter:
            gx = grad_from(ax)
            measure = float(np.abs(x - np.clip(x - gx, 0.0, p.s_max)).max())
            if measure <= config.source_tol * scale:
                return StepResult(x, True, it, measure)
    warnings.warn(f"source step stopped after {config.source_max_iter} iterations "
                  f"(projected gradient {measure:.2e})", ConvergenceWarning, stacklevel=2)
    return StepResult(x, False, config.source_max_iter, measure)


@dataclass
class OptimizerResult:
    grid: SourceGrid
    beta: np.ndarray
    background: np.ndarray
    objective_trace: list
    residuals: np.ndarray
    converged: bool
    lam: float
    negative_background: bool = False
    info: dict = field(default_factory=dict)


def alternate(problem: QuadraticProblem, config: OptimizerConfig, s0=None, beta0=None):
    """Alternating minimisation over (beta, s). Returns ``(s, beta, trace, converged)``."""
    p = problem
    m = p.A.shape[1]
    s = np.zeros(m) if s0 is None else np.clip(np.asarray(s0, dtype=float), 0.0, p.s_max)
    beta = p.beta0.copy() if beta0 is None else np.asarray(beta0, dtype=float).copy()
    L = operator_norm_sq(p.A)
    f = objective(s, beta, p)
    trace = [f]
    converged = False
    all_steps_ok = True
    for it in range(config.max_outer):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            bstep = solve_background(s, beta, p, config)
            f_b = objective(s, bstep.value, p)
            feasible = np.all(p.background(bstep.value) <= p.y + p.tau + 1e-6)
            if f_b <= f + 1e-12 * max(1.0, abs(f)) and feasible:
                beta, f = bstep.value, f_b
            elif not np.all(p.background(beta) <= p.y + p.tau + 1e-6) and feasible:
                beta, f = bstep.value, f_b
            sstep = solve_sources(beta, s, p, config, L)
            f_s = objective(sstep.value, beta, p)
            if f_s <= f:
                s, f = sstep.value, f_s
        all_steps_ok = all_steps_ok and bstep.converged and sstep.converged
        prev = trace[-1]
        trace.append(f)
        log.debug("outer %d objective %.10g", it, f)
        if abs(prev - f) <= config.tol * max(1.0, abs(f)):
            converged = True
            break
    return s, beta, trace, converged


def solve(survey: Survey, grid: SourceGrid, background: BackgroundModel,
          config: OptimizerConfig = OptimizerConfig(), geom: PlumeGeometry = PlumeGeometry(),
          source_height: float = 0.0) -> OptimizerResult:
    """Fit gridded emission rates and background to a survey."""
    A = build_matrix(survey, grid.sources(source_height), geom).to_ppb()
    problem = QuadraticProblem.build(A, background.basis, survey.concentrations, background.precision,
                                     background.beta0, config, background.mu)
    beta_start = background.beta0.copy()
    if background.is_identity:
        beta_start = np.minimum(beta_start, problem.y + problem.tau)
    s, beta, trace, converged = alternate(problem, config, None, beta_start)
    if not converged:
        warnings.warn(f"alternating solver stopped after {config.max_outer} outer iterations",
                      ConvergenceWarning, stacklevel=2)
    bg = problem.background(beta)
    negative = bool(np.any(bg < 0))
    if negative:
        warnings.warn("fitted background has negative entries", RuntimeWarning, stacklevel=2)
    resid = survey.concentrations - A @ s - bg
    return OptimizerResult(grid.with_rates(s), beta, bg, trace, resid, converged, problem.lam, negative,
                           {"outer_iterations": len(trace) - 1})
