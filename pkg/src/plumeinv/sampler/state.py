"""Priors, proposal scales, chain state and the unnormalised log posterior."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, sparse

from ..background import BackgroundModel
from ..core import SourceSet
from ..plume import PlumeGeometry

LOG_2PI = np.log(2.0 * np.pi)


class NumericalRankError(np.linalg.LinAlgError):
    """The background full-conditional precision is not positive definite."""


def wrap_angle(x):
    """Wrap to the half-open interval (-pi, pi]."""
    return x - 2.0 * np.pi * np.ceil((x - np.pi) / (2.0 * np.pi))


@dataclass(frozen=True)
class Priors:
    """Independent uniform priors on source parameters and the source count.

    Locations are uniform on ``x_range`` x ``y_range``, widths on
    [0, width_max] and rates on [0, rate_max]. The noise scale is flat in
    log sigma over ``sigma_range``, the wind bias uniform on (-pi, pi] and the
    opening angles uniform on ``angle_range``.
    """

    x_range: tuple[float, float]
    y_range: tuple[float, float]
    width_max: float = 200.0
    rate_max: float = 1.0
    m_max: int = 30
    m_min: int = 0
    sigma_range: tuple[float, float] = (0.01, 1000.0)
    angle_range: tuple[float, float] = (np.deg2rad(1.0), np.deg2rad(45.0))

    def __post_init__(self):
        if not (self.x_range[1] > self.x_range[0] and self.y_range[1] > self.y_range[0]):
            raise ValueError("location ranges must be non-empty")
        if self.width_max <= 0 or self.rate_max <= 0:
            raise ValueError("width and rate ranges must be > 0")
        if not 0 <= self.m_min <= self.m_max:
            raise ValueError("need 0 <= m_min <= m_max")

    @property
    def ranges(self) -> np.ndarray:
        """(R_z1, R_z2, R_w, R_s)."""
        return np.array([self.x_range[1] - self.x_range[0], self.y_range[1] - self.y_range[0],
                         self.width_max, self.rate_max])

    @property
    def log_source_density(self) -> float:
        return -float(np.sum(np.log(self.ranges)))

    def in_domain(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float).reshape(-1, 2)
        return ((z[:, 0] >= self.x_range[0]) & (z[:, 0] <= self.x_range[1])
                & (z[:, 1] >= self.y_range[0]) & (z[:, 1] <= self.y_range[1]))

    def in_support(self, z, w, s) -> bool:
        w = np.asarray(w, dtype=float)
        s = np.asarray(s, dtype=float)
        return bool(np.all(self.in_domain(z)) and np.all((w >= 0) & (w <= self.width_max))
                    and np.all((s >= 0) & (s <= self.rate_max)))

    def log_m(self, m: int) -> float:
        if m < self.m_min or m > self.m_max:
            return -np.inf
        return -np.log(self.m_max - self.m_min + 1)

    def log_sigma(self, sigma: float) -> float:
        lo, hi = self.sigma_range
        if not lo <= sigma <= hi:
            return -np.inf
        return -np.log(sigma) - np.log(np.log(hi / lo))

    def log_angle(self, gamma: float) -> float:
        lo, hi = self.angle_range
        if not lo <= gamma <= hi:
            return -np.inf
        return -np.log(hi - lo)

    def draw_source(self, rng):
        z = np.array([rng.uniform(*self.x_range), rng.uniform(*self.y_range)])
        return z, rng.uniform(0.0, self.width_max), rng.uniform(0.0, self.rate_max)


@dataclass(frozen=True)
class ProposalScales:
    """Random-walk standard deviations and split draw widths.

    Split widths left as ``None`` default to twice the matching random-walk scale.
    """

    location: float = 250.0
    width: float = 20.0
    rate: float = 0.01
    log_sigma: float = 0.05
    bias: float = np.deg2rad(0.5)
    log_angle: float = 0.02
    split_location: float = None
    split_width: float = None
    split_rate: float = None

    def __post_init__(self):
        for name in ("location", "width", "rate", "log_sigma", "bias", "log_angle"):
            if getattr(self, name) <= 0:
                raise ValueError(f"proposal scale {name} must be > 0")
        for name in ("split_location", "split_width", "split_rate"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def split_widths(self) -> np.ndarray:
        """(E_z1, E_z2, E_w, E_s)."""
        ez = 2.0 * self.location if self.split_location is None else self.split_location
        ew = 2.0 * self.width if self.split_width is None else self.split_width
        es = 2.0 * self.rate if self.split_rate is None else self.split_rate
        return np.array([ez, ez, ew, es])


@dataclass
class ChainState:
    """Current parameter values plus cached forward quantities.

    ``A`` holds one column per source in ppb per (m^3/s); ``plume = A @ s`` and
    ``bg = P @ beta`` in ppb.
    """

    z: np.ndarray
    w: np.ndarray
    s: np.ndarray
    beta: np.ndarray
    sigma: float
    geom: PlumeGeometry
    A: np.ndarray = None
    plume: np.ndarray = None
    bg: np.ndarray = None
    beta_penalty: float = 0.0
    log_post: float = -np.inf

    @property
    def m(self) -> int:
        return len(self.s)

    def sources(self, height: float = 0.0) -> SourceSet:
        return SourceSet.from_arrays(self.z, self.w, self.s, height)

    def params(self) -> np.ndarray:
        """(m, 4) array of (x, y, w, s)."""
        return np.column_stack([self.z.reshape(-1, 2), self.w, self.s])

    def copy(self) -> "ChainState":
        return replace(self, z=self.z.copy(), w=self.w.copy(), s=self.s.copy(), beta=self.beta.copy(),
                       A=None if self.A is None else self.A.copy(),
                       plume=None if self.plume is None else self.plume.copy(),
                       bg=None if self.bg is None else self.bg.copy())


@dataclass
class Switches:
    """Which parameter blocks are sampled.

    ``dimension_moves`` lists the enabled dimension-changing moves, chosen
    uniformly each iteration; birth and death (and split and coalesce) must be
    enabled together so each move and its reverse are proposed equally often.
    """

    sources: bool = True
    dimension: bool = True
    sigma: bool = True
    background: bool = True
    bias: bool = True
    angles: bool = False
    likelihood: bool = True
    dimension_moves: tuple = ("birth", "death", "split", "coalesce")

    def __post_init__(self):
        moves = set(self.dimension_moves)
        if not moves <= {"birth", "death", "split", "coalesce"}:
            raise ValueError(f"unknown dimension moves {sorted(moves)}")
        if ("birth" in moves) != ("death" in moves) or ("split" in moves) != ("coalesce" in moves):
            raise ValueError("birth/death and split/coalesce must be enabled in pairs")
        if self.dimension and not moves:
            raise ValueError("no dimension moves enabled")


class Posterior:
    """Unnormalised log posterior of the source mixture model.

    Args:
        forward: object with ``n`` and ``columns(locations, half_widths, geom)``
            returning ppb per (m^3/s).
        y: measured concentrations, ppb.
        background: background model, or ``None`` for a fixed background vector
            given by ``fixed_background`` (zeros by default).
        priors: parameter priors.
        switches: enabled blocks; with ``likelihood=False`` the target is the prior.
    """

    def __init__(self, forward, y, background: BackgroundModel, priors: Priors,
                 switches: Switches = None, fixed_background=None):
        self.forward = forward
        self.y = np.asarray(y, dtype=float)
        self.n = len(self.y)
        self.background = background
        self.priors = priors
        self.switches = switches or Switches()
        if background is None:
            self.fixed_bg = np.zeros(self.n) if fixed_background is None else np.asarray(fixed_background, float)
        else:
            self.fixed_bg = None
        self._gibbs_cache = None

    # -- pieces -----------------------------------------------------------
    def log_likelihood(self, resid, sigma) -> float:
        if not self.switches.likelihood:
            return 0.0
        return float(-self.n * np.log(sigma) - 0.5 * (resid @ resid) / sigma ** 2 - 0.5 * self.n * LOG_2PI)

    def background_values(self, beta) -> np.ndarray:
        if self.background is None:
            return self.fixed_bg
        return self.background.evaluate(beta)

    def background_penalty(self, beta) -> float:
        if self.background is None:
            return 0.0
        return 0.5 * self.background.mu * self.background.penalty(beta)

    def log_prior(self, state: ChainState) -> float:
        pr = self.priors
        if not pr.in_support(state.z, state.w, state.s):
            return -np.inf
        lp = pr.log_m(state.m) + state.m * pr.log_source_density
        if self.switches.sigma:
            lp += pr.log_sigma(state.sigma)
        if self.switches.bias:
            lp += -LOG_2PI
        if self.switches.angles:
            lp += pr.log_angle(state.geom.opening_angle_h) + pr.log_angle(state.geom.opening_angle_v)
        return lp - state.beta_penalty

    def compose(self, state: ChainState) -> float:
        """Log posterior from cached A and bg; refreshes ``plume`` exactly."""
        state.plume = state.A @ state.s if state.m else np.zeros(self.n)
        lp = self.log_prior(state)
        if lp == -np.inf:
            state.log_post = -np.inf
            return state.log_post
        state.log_post = lp + self.log_likelihood(self.y - state.plume - state.bg, state.sigma)
        return state.log_post

    def refresh(self, state: ChainState) -> float:
        """Recompute every cached quantity from the parameters."""
        state.z = np.asarray(state.z, dtype=float).reshape(-1, 2)
        state.A = self.columns(state.z, state.w, state.geom)
        state.bg = self.background_values(state.beta)
        state.beta_penalty = self.background_penalty(state.beta)
        return self.compose(state)

    def columns(self, z, w, geom) -> np.ndarray:
        if len(w) == 0:
            return np.zeros((self.n, 0))
        return self.forward.columns(np.asarray(z).reshape(-1, 2), np.asarray(w), geom)

    def log_posterior(self, state: ChainState) -> float:
        """From-scratch log posterior of ``state`` (does not touch its caches)."""
        return self.refresh(state.copy())

    # -- background full conditional ---------------------------------------
    def _gibbs_setup(self):
        if self._gibbs_cache is None:
            bgm = self.background
            J = bgm.precision.toarray() if sparse.issparse(bgm.precision) else np.asarray(bgm.precision)
            if bgm.is_identity:
                evals, vecs = np.linalg.eigh(J)
                self._gibbs_cache = ("eig", np.maximum(evals, 0.0), vecs, J @ bgm.beta0)
            else:
                P = np.asarray(bgm.basis)
                self._gibbs_cache = ("chol", P.T @ P, J, J @ bgm.beta0)
        return self._gibbs_cache

    def conditional_moments(self, state: ChainState):
        """Mean and covariance of beta given everything else.

        Completing the square in the Gaussian likelihood and the Gaussian
        background prior gives precision sigma^-2 P'P + mu J and mean
        precision^-1 (sigma^-2 P'(y - A s) + mu J beta0).
        """
        bgm = self.background
        kind, a, b, Jb0 = self._gibbs_setup()
        inv_s2 = 1.0 / state.sigma ** 2
        h = inv_s2 * np.asarray(bgm.basis.T @ (self.y - state.plume)).ravel() + bgm.mu * Jb0
        if kind == "eig":
            d = inv_s2 + bgm.mu * a
            mean = b @ ((b.T @ h) / d)
            cov = (b / d) @ b.T
        else:
            prec = inv_s2 * a + bgm.mu * b
            cov = np.linalg.inv(prec)
            mean = np.linalg.solve(prec, h)
        return mean, cov

    def draw_background(self, state: ChainState, rng) -> np.ndarray:
        bgm = self.background
        kind, a, b, Jb0 = self._gibbs_setup()
        inv_s2 = 1.0 / state.sigma ** 2
        h = inv_s2 * np.asarray(bgm.basis.T @ (self.y - state.plume)).ravel() + bgm.mu * Jb0
        xi = rng.standard_normal(len(h))
        if kind == "eig":
            d = inv_s2 + bgm.mu * a
            return b @ ((b.T @ h) / d + xi / np.sqrt(d))
        prec = inv_s2 * a + bgm.mu * b
        try:
            L = linalg.cholesky(prec, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalRankError("background conditional precision is not positive definite") from exc
        mean = linalg.cho_solve((L, True), h)
        return mean + linalg.solve_triangular(L.T, xi, lower=False)


def log_posterior(state: ChainState, posterior: Posterior) -> float:
    """Unnormalised log posterior of a chain state."""
    return posterior.log_posterior(state)


def make_state(posterior: Posterior, z, w, s, beta=None, sigma: float = 3.0,
               geom: PlumeGeometry = PlumeGeometry()) -> ChainState:
    bgm = posterior.background
    if beta is None:
        beta = bgm.beta0.copy() if bgm is not None else np.zeros(0)
    state = ChainState(np.asarray(z, dtype=float).reshape(-1, 2), np.asarray(w, dtype=float).ravel(),
                       np.asarray(s, dtype=float).ravel(), np.asarray(beta, dtype=float).copy(),
                       float(sigma), geom)
    posterior.refresh(state)
    return state
