"""Metropolis-Hastings, Gibbs and reversible-jump moves.

Every move mutates ``state`` in place and returns ``True`` when the proposal
was accepted. Sources are treated as an unordered set: births append, deaths
remove a uniformly chosen element and split children replace the parent.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .state import ChainState, Posterior, ProposalScales, wrap_angle

BLOCKS = ("locations", "widths", "rates")


def _metropolis(log_alpha: float, rng) -> bool:
    u = rng.random()
    return bool(np.isfinite(log_alpha) and np.log(u) < log_alpha)


def _adopt(state: ChainState, cand: ChainState) -> None:
    state.__dict__.update(cand.__dict__)


def _candidate(state: ChainState, **changes) -> ChainState:
    return replace(state, **changes)


# -- fixed-dimension source blocks ---------------------------------------------
def _update_one(posterior: Posterior, state: ChainState, block: str, j: int,
                scales: ProposalScales, rng) -> bool:
    pr = posterior.priors
    if block == "locations":
        zj = state.z[j] + scales.location * rng.standard_normal(2)
        if not pr.in_domain(zj)[0]:
            rng.random()  # keep the stream aligned with the accept draw
            return False
        z = state.z.copy()
        z[j] = zj
        A = state.A.copy()
        A[:, j] = posterior.columns(zj, state.w[j:j + 1], state.geom)[:, 0]
        cand = _candidate(state, z=z, A=A)
    elif block == "widths":
        wj = abs(state.w[j] + scales.width * rng.standard_normal())
        if wj > pr.width_max:
            rng.random()
            return False
        w = state.w.copy()
        w[j] = wj
        A = state.A.copy()
        A[:, j] = posterior.columns(state.z[j], w[j:j + 1], state.geom)[:, 0]
        cand = _candidate(state, w=w, A=A)
    elif block == "rates":
        sj = abs(state.s[j] + scales.rate * rng.standard_normal())
        if sj > pr.rate_max:
            rng.random()
            return False
        s = state.s.copy()
        s[j] = sj
        cand = _candidate(state, s=s)
    else:
        raise ValueError(f"unknown block {block!r}")
    lp = posterior.compose(cand)
    if _metropolis(lp - state.log_post, rng):
        _adopt(state, cand)
        return True
    return False


def mh_block_update(posterior: Posterior, state: ChainState, block: str, scales: ProposalScales,
                    rng) -> tuple[int, int]:
    """Sequential random-walk updates of one parameter block over all sources.

    Locations use a plain Gaussian walk and out-of-domain candidates are
    rejected. Widths and rates use a Gaussian walk reflected at zero, which is
    still symmetric, and candidates above the prior range are rejected.

    Returns:
        ``(proposed, accepted)`` counts.
    """
    accepted = 0
    for j in range(state.m):
        accepted += _update_one(posterior, state, block, j, scales, rng)
    return state.m, accepted


# -- scalar blocks -------------------------------------------------------------
def update_sigma(posterior: Posterior, state: ChainState, scales: ProposalScales, rng) -> bool:
    """Random walk on log sigma; the log-scale proposal adds log(sigma'/sigma)."""
    step = scales.log_sigma * rng.standard_normal()
    cand = _candidate(state, sigma=float(state.sigma * np.exp(step)))
    lp = posterior.compose(cand)
    if _metropolis(lp - state.log_post + step, rng):
        _adopt(state, cand)
        return True
    return False


def gibbs_background(posterior: Posterior, state: ChainState, rng) -> np.ndarray:
    """Exact draw of beta from its Gaussian full conditional."""
    beta = posterior.draw_background(state, rng)
    state.beta = beta
    state.bg = posterior.background_values(beta)
    state.beta_penalty = posterior.background_penalty(beta)
    posterior.compose(state)
    return beta


def update_wind_bias(posterior: Posterior, state: ChainState, scales: ProposalScales, rng) -> bool:
    """Random walk on the wind bias wrapped to (-pi, pi]; rebuilds A."""
    omega = float(wrap_angle(state.geom.wind_bias + scales.bias * rng.standard_normal()))
    geom = replace(state.geom, wind_bias=omega)
    cand = _candidate(state, geom=geom, A=posterior.columns(state.z, state.w, geom))
    lp = posterior.compose(cand)
    if _metropolis(lp - state.log_post, rng):
        _adopt(state, cand)
        return True
    return False


def update_opening_angles(posterior: Posterior, state: ChainState, scales: ProposalScales,
                          rng) -> bool:
    """Joint random walk on (log gamma_h, log gamma_v) with the log-scale Jacobian."""
    steps = scales.log_angle * rng.standard_normal(2)
    gh = state.geom.opening_angle_h * np.exp(steps[0])
    gv = state.geom.opening_angle_v * np.exp(steps[1])
    pr = posterior.priors
    if not np.isfinite(pr.log_angle(gh) + pr.log_angle(gv)):
        rng.random()
        return False
    geom = replace(state.geom, opening_angle_h=float(gh), opening_angle_v=float(gv))
    cand = _candidate(state, geom=geom, A=posterior.columns(state.z, state.w, geom))
    lp = posterior.compose(cand)
    if _metropolis(lp - state.log_post + steps.sum(), rng):
        _adopt(state, cand)
        return True
    return False


# -- dimension-changing moves ------------------------------------------------
def split_children(parent, r):
    """Children ``parent - r`` and ``parent + r`` of a (x, y, w, s) parameter row."""
    parent = np.asarray(parent, dtype=float)
    r = np.asarray(r, dtype=float)
    return parent - r, parent + r


def coalesce_parent(a, b):
    """Parameter-wise midpoint of two (x, y, w, s) rows."""
    return 0.5 * (np.asarray(a, dtype=float) + np.asarray(b, dtype=float))


def feasible_pairs(params, widths) -> list[tuple[int, int]]:
    """Index pairs whose differences are reachable by a single split draw.

    A split with draw r produces children 2r apart, and r lies in [-E/2, E/2],
    so a pair is feasible when every |difference| <= E.
    """
    params = np.asarray(params, dtype=float).reshape(-1, 4)
    m = len(params)
    if m < 2:
        return []
    diff = np.abs(params[:, None, :] - params[None, :, :])
    ok = np.all(diff <= widths, axis=-1)
    i, j = np.nonzero(np.triu(ok, k=1))
    return list(zip(i.tolist(), j.tolist()))


def split_log_ratio(delta_log_post: float, m: int, n_feasible_after: int, widths) -> float:
    """Log acceptance ratio (before the min with 1) of splitting one of m sources.

    Includes the Jacobian of (parent, r) -> children (2 per dimension, 16 in
    all) halved because the two children are unordered, the parent selection
    probability 1/m, the set-count factor m + 1 and the reverse selection of
    one of ``n_feasible_after`` coalescible pairs.
    """
    return (delta_log_post + np.log(8.0) + float(np.sum(np.log(widths)))
            + np.log(m * (m + 1.0)) - np.log(n_feasible_after))


def _with_sources(state: ChainState, params, A) -> ChainState:
    params = np.asarray(params, dtype=float).reshape(-1, 4)
    return _candidate(state, z=params[:, :2].copy(), w=params[:, 2].copy(), s=params[:, 3].copy(), A=A)


def birth_proposal(posterior: Posterior, state: ChainState, theta):
    """Candidate with source ``theta = (x, y, w, s)`` added, and its log acceptance ratio.

    The prior terms of the new source cancel against the proposal density,
    leaving the likelihood ratio times p(m + 1)/p(m).
    """
    theta = np.asarray(theta, dtype=float)
    col = posterior.columns(theta[:2], theta[2:3], state.geom)
    cand = _with_sources(state, np.vstack([state.params(), theta]), np.hstack([state.A, col]))
    lp = posterior.compose(cand)
    return cand, lp - state.log_post - posterior.priors.log_source_density


def death_proposal(posterior: Posterior, state: ChainState, j: int):
    """Candidate with source ``j`` removed, and its log acceptance ratio."""
    keep = np.arange(state.m) != j
    cand = _with_sources(state, state.params()[keep], state.A[:, keep])
    lp = posterior.compose(cand)
    return cand, lp - state.log_post + posterior.priors.log_source_density


def split_proposal(posterior: Posterior, state: ChainState, scales: ProposalScales, j: int, r):
    """Candidate with source ``j`` replaced by children at parent -/+ r, and its log ratio.

    Returns ``(None, -inf)`` when a child leaves the prior support.
    """
    pr = posterior.priors
    widths = scales.split_widths
    params = state.params()
    lo, hi = split_children(params[j], r)
    if not pr.in_support(np.vstack([lo[:2], hi[:2]]), [lo[2], hi[2]], [lo[3], hi[3]]):
        return None, -np.inf
    new = params.copy()
    new[j] = lo
    new = np.vstack([new, hi])
    cols = posterior.columns(np.vstack([lo[:2], hi[:2]]), [lo[2], hi[2]], state.geom)
    A = state.A.copy()
    A[:, j] = cols[:, 0]
    A = np.hstack([A, cols[:, 1:]])
    cand = _with_sources(state, new, A)
    lp = posterior.compose(cand)
    n_feas = len(feasible_pairs(new, widths))
    return cand, split_log_ratio(lp - state.log_post, state.m, n_feas, widths)


def coalesce_proposal(posterior: Posterior, state: ChainState, scales: ProposalScales, pair, n_pairs=None):
    """Candidate with ``pair`` merged into its midpoint, and its log acceptance ratio.

    ``n_pairs`` is the number of feasible pairs in ``state`` (computed when omitted).
    Returns ``(None, -inf)`` when the pair is not a feasible split result.
    """
    widths = scales.split_widths
    params = state.params()
    a, b = pair
    if np.any(np.abs(params[a] - params[b]) > widths):
        return None, -np.inf
    if n_pairs is None:
        n_pairs = len(feasible_pairs(params, widths))
    parent = coalesce_parent(params[a], params[b])
    keep = np.ones(state.m, dtype=bool)
    keep[[a, b]] = False
    col = posterior.columns(parent[:2], parent[2:3], state.geom)
    cand = _with_sources(state, np.vstack([params[keep], parent]), np.hstack([state.A[:, keep], col]))
    lp = posterior.compose(cand)
    return cand, -split_log_ratio(state.log_post - lp, state.m - 1, n_pairs, widths)


def birth(posterior: Posterior, state: ChainState, rng) -> bool:
    """Add one source drawn from the prior."""
    pr = posterior.priors
    if state.m >= pr.m_max:
        return False
    z, w, s = pr.draw_source(rng)
    cand, log_alpha = birth_proposal(posterior, state, [z[0], z[1], w, s])
    if _metropolis(log_alpha, rng):
        _adopt(state, cand)
        return True
    return False


def death(posterior: Posterior, state: ChainState, rng) -> bool:
    """Remove a uniformly chosen source; reverse of :func:`birth`."""
    if state.m <= posterior.priors.m_min or state.m == 0:
        return False
    cand, log_alpha = death_proposal(posterior, state, int(rng.integers(state.m)))
    if _metropolis(log_alpha, rng):
        _adopt(state, cand)
        return True
    return False


def split(posterior: Posterior, state: ChainState, scales: ProposalScales, rng) -> bool:
    """Replace a uniformly chosen source by two children at parent -/+ r."""
    if state.m < 1 or state.m >= posterior.priors.m_max:
        return False
    j = int(rng.integers(state.m))
    half = 0.5 * scales.split_widths
    r = rng.uniform(-half, half)
    cand, log_alpha = split_proposal(posterior, state, scales, j, r)
    if _metropolis(log_alpha, rng):
        _adopt(state, cand)
        return True
    return False


def coalesce(posterior: Posterior, state: ChainState, scales: ProposalScales, rng) -> bool:
    """Merge a uniformly chosen feasible pair into its midpoint; reverse of :func:`split`."""
    m = state.m
    if m < 2 or m - 1 < posterior.priors.m_min:
        return False
    pairs = feasible_pairs(state.params(), scales.split_widths)
    if not pairs:
        return False
    pair = pairs[int(rng.integers(len(pairs)))]
    cand, log_alpha = coalesce_proposal(posterior, state, scales, pair, len(pairs))
    if _metropolis(log_alpha, rng):
        _adopt(state, cand)
        return True
    return False


DIMENSION_MOVES = ("birth", "death", "split", "coalesce")


def dimension_move(posterior: Posterior, state: ChainState, scales: ProposalScales, rng) -> tuple[str, bool]:
    """Pick one enabled dimension move uniformly (1/4 each by default) and apply it."""
    enabled = posterior.switches.dimension_moves
    name = enabled[int(rng.integers(len(enabled)))]
    if name == "birth":
        return name, birth(posterior, state, rng)
    if name == "death":
        return name, death(posterior, state, rng)
    if name == "split":
        return name, split(posterior, state, scales, rng)
    return name, coalesce(posterior, state, scales, rng)
