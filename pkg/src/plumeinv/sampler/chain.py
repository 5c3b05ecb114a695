"""Chain driver, thinned trace and initialisation from an optimiser map."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import moves
from .state import ChainState, Posterior, ProposalScales, make_state

log = logging.getLogger(__name__)

MOVE_NAMES = ("locations", "widths", "rates", "sigma", "bias", "angles") + moves.DIMENSION_MOVES


class ChainAborted(RuntimeError):
    """A numerical failure stopped the chain; ``trace`` holds the samples so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class AuditError(RuntimeError):
    """Cached log posterior drifted from a from-scratch recomputation."""


@dataclass(frozen=True)
class ChainConfig:
    """Iteration schedule.

    Attributes:
        iterations: total sweeps, burn-in included.
        burn_in: sweeps discarded before the first snapshot.
        thin: keep every ``thin``-th post-burn-in sweep.
        audit_every: sweeps between cached-posterior audits (0 disables).
        audit_tol: allowed absolute drift of the cached log posterior.
        seed: RNG seed.
    """

    iterations: int = 13000
    burn_in: int = 3000
    thin: int = 1
    audit_every: int = 1000
    audit_tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise ValueError("need iterations >= 1 and 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")

    @property
    def n_snapshots(self) -> int:
        return -(-(self.iterations - self.burn_in) // self.thin)


@dataclass
class ChainTrace:
    """Thinned post-burn-in snapshots plus move acceptance counters.

    ``sources[k]`` is an (m_k, 4) array of (x, y, w, s); ``background`` and
    ``plume`` hold the modelled ppb contributions at every measurement.
    """

    iterations: list = field(default_factory=list)
    sources: list = field(default_factory=list)
    sigma: list = field(default_factory=list)
    bias: list = field(default_factory=list)
    gamma_h: list = field(default_factory=list)
    gamma_v: list = field(default_factory=list)
    log_post: list = field(default_factory=list)
    background: list = field(default_factory=list)
    plume: list = field(default_factory=list)
    proposed: dict = field(default_factory=lambda: dict.fromkeys(MOVE_NAMES, 0))
    accepted: dict = field(default_factory=lambda: dict.fromkeys(MOVE_NAMES, 0))
    audits: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.iterations)

    def record(self, it: int, state: ChainState) -> None:
        self.iterations.append(it)
        self.sources.append(state.params())
        self.sigma.append(state.sigma)
        self.bias.append(state.geom.wind_bias)
        self.gamma_h.append(state.geom.opening_angle_h)
        self.gamma_v.append(state.geom.opening_angle_v)
        self.log_post.append(state.log_post)
        self.background.append(state.bg.copy())
        self.plume.append(state.plume.copy())

    def count(self, name: str, proposed: int, accepted: int) -> None:
        self.proposed[name] += int(proposed)
        self.accepted[name] += int(accepted)

    @property
    def m(self) -> np.ndarray:
        return np.array([len(p) for p in self.sources], dtype=int)

    def acceptance_rates(self) -> dict:
        return {k: (self.accepted[k] / self.proposed[k] if self.proposed[k] else float("nan"))
                for k in MOVE_NAMES}

    def scalars(self) -> dict:
        return {"iteration": np.array(self.iterations, dtype=int), "m": self.m,
                "sigma": np.array(self.sigma), "bias": np.array(self.bias),
                "gamma_h": np.array(self.gamma_h), "gamma_v": np.array(self.gamma_v),
                "log_post": np.array(self.log_post)}

    @classmethod
    def concatenate(cls, traces) -> "ChainTrace":
        """Pool independently burned-in chains."""
        out = cls()
        for t in traces:
            for name in ("iterations", "sources", "sigma", "bias", "gamma_h", "gamma_v", "log_post",
                         "background", "plume", "audits"):
                getattr(out, name).extend(getattr(t, name))
            for k in MOVE_NAMES:
                out.proposed[k] += t.proposed.get(k, 0)
                out.accepted[k] += t.accepted.get(k, 0)
        return out


def sweep(posterior: Posterior, state: ChainState, scales: ProposalScales, rng, trace: ChainTrace) -> None:
    """One full iteration: source blocks, sigma, beta, bias, angles, one dimension move."""
    sw = posterior.switches
    if sw.sources:
        for block in moves.BLOCKS:
            trace.count(block, *moves.mh_block_update(posterior, state, block, scales, rng))
    if sw.sigma:
        trace.count("sigma", 1, moves.update_sigma(posterior, state, scales, rng))
    if sw.background and posterior.background is not None:
        moves.gibbs_background(posterior, state, rng)
    if sw.bias:
        trace.count("bias", 1, moves.update_wind_bias(posterior, state, scales, rng))
    if sw.angles:
        trace.count("angles", 1, moves.update_opening_angles(posterior, state, scales, rng))
    if sw.dimension:
        name, ok = moves.dimension_move(posterior, state, scales, rng)
        trace.count(name, 1, ok)


def audit(posterior: Posterior, state: ChainState, tol: float) -> float:
    """Compare the cached log posterior with a full recomputation and resync."""
    fresh = posterior.log_posterior(state)
    drift = abs(fresh - state.log_post) if np.isfinite(fresh) else np.inf
    if drift > tol:
        raise AuditError(f"cached log posterior drifted by {drift:.3e}")
    posterior.refresh(state)
    return drift


def run_chain(posterior: Posterior, init: ChainState, scales: ProposalScales = ProposalScales(),
              config: ChainConfig = ChainConfig(), rng=None, progress=None) -> ChainTrace:
    """Run one chain and return its thinned trace.

    Args:
        posterior: target distribution.
        init: starting state; it is copied, not modified.
        scales: proposal scales.
        config: iteration schedule and seed.
        rng: optional generator overriding ``config.seed``.
        progress: optional callable ``progress(iteration, state)`` invoked after each sweep.

    Raises:
        ChainAborted: on a numerical failure, carrying the partial trace.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    state = init.copy()
    posterior.refresh(state)
    if not np.isfinite(state.log_post):
        raise ValueError("initial state lies outside the prior support")
    trace = ChainTrace()
    for it in range(config.iterations):
        try:
            with np.errstate(over="raise", invalid="raise", divide="raise", under="ignore"):
                sweep(posterior, state, scales, rng, trace)
            if config.audit_every and (it + 1) % config.audit_every == 0:
                trace.audits.append((it + 1, audit(posterior, state, config.audit_tol)))
        except (FloatingPointError, np.linalg.LinAlgError, AuditError, ValueError) as exc:
            raise ChainAborted(f"chain aborted at iteration {it}: {exc}", trace) from exc
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            trace.record(it, state)
        if progress is not None:
            progress(it, state)
    return trace


def initial_sources(centers, rates, k: int, rng, half_width: float, rate_max: float = np.inf):
    """Draw ``k`` distinct cells with probability proportional to their rate.

    Returns ``(z, w, s)`` arrays placing one source at each chosen cell centre
    with the cell's rate (capped at ``rate_max``).
    """
    rates = np.asarray(rates, dtype=float)
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    positive = np.flatnonzero(rates > 0)
    k = min(k, len(positive))
    if k == 0:
        return np.zeros((0, 2)), np.zeros(0), np.zeros(0)
    p = rates[positive] / rates[positive].sum()
    pick = np.sort(rng.choice(positive, size=k, replace=False, p=p))
    return centers[pick].copy(), np.full(k, float(half_width)), np.minimum(rates[pick], rate_max)


def initial_state(posterior: Posterior, centers, rates, k: int, rng, half_width: float,
                  beta=None, sigma: float = 3.0, geom=None) -> ChainState:
    """Chain state seeded from a gridded rate map."""
    pr = posterior.priors
    z, w, s = initial_sources(centers, rates, k, rng, min(half_width, pr.width_max), pr.rate_max)
    inside = pr.in_domain(z)
    z, w, s = z[inside], w[inside], s[inside]
    keep = min(len(s), pr.m_max)
    kwargs = {} if geom is None else {"geom": geom}
    return make_state(posterior, z[:keep], w[:keep], s[:keep], beta=beta, sigma=sigma, **kwargs)
