"""Background concentration models b = P @ beta with a quadratic smoothness penalty.

Two constructions are provided:

* a Gauss-Markov random field over the measurements themselves (P = I) whose
  precision links consecutive points and "wind-linked" points, and
* a tensor-product Chebyshev (second kind) basis over (x, y, z, t) with
  reference, curvature and wind-transport penalties.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .core import Survey

ADJACENT = "adjacent"
WIND = "wind"


class DegenerateLinkError(ValueError):
    """Raised when a link has zero time and zero distance separation."""


class DomainError(ValueError):
    """Raised when a coordinate falls outside the Chebyshev domain box."""


@dataclass(frozen=True)
class MrfSpec:
    c_t: float = 0.005  # ppb per second
    c_d: float = 0.0005  # ppb per metre
    edges: tuple = ()  # (i, j, kind) triples

    def __post_init__(self):
        if self.c_t <= 0 or self.c_d <= 0:
            raise ValueError("c_t and c_d must be > 0")
        for i, j, kind in self.edges:
            if i == j:
                raise ValueError(f"self-edge at {i}")
            if kind == ADJACENT and abs(i - j) != 1:
                raise ValueError(f"adjacent edge ({i}, {j}) does not join consecutive points")


@dataclass
class BackgroundModel:
    """Background representation and Gaussian prior ``exp(-mu/2 (b-b0)' J (b-b0))``.

    ``basis`` is either a dense (n, r) array or a sparse identity for the MRF case.
    ``precision`` may be sparse or dense.
    """

    basis: object
    beta0: np.ndarray
    precision: object
    mu: float = 1.0
    kind: str = "mrf"
    meta: dict = field(default_factory=dict)

    @property
    def r(self) -> int:
        return self.basis.shape[1]

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def is_identity(self) -> bool:
        return self.kind == "mrf"

    def evaluate(self, beta) -> np.ndarray:
        return np.asarray(self.basis @ np.asarray(beta, dtype=float)).ravel()

    def penalty(self, beta) -> float:
        """(beta - beta0)' J (beta - beta0), without the mu/2 factor."""
        d = np.asarray(beta, dtype=float) - self.beta0
        return float(d @ (self.precision @ d))


# ---------------------------------------------------------------------------
# Markov random field
# ---------------------------------------------------------------------------

def build_wind_links(survey: Survey) -> list[tuple[int, int]]:
    """Link each point to the start of the first later segment its wind ray crosses.

    The ray starts at point i and runs along the local wind direction in the
    horizontal plane. Only segments (k, k+1) with k > i are considered and the
    crossing must lie at strictly positive range.
    """
    xy = survey.positions[:, :2]
    starts = xy[:-1]
    seg = xy[1:] - xy[:-1]
    n = survey.n
    links = []
    for i in range(n - 2):
        d = survey.winds[i]
        norm = np.hypot(d[0], d[1])
        if norm == 0:
            continue
        d = d / norm
        a = starts[i + 1:]
        e = seg[i + 1:]
        denom = d[0] * e[:, 1] - d[1] * e[:, 0]
        ap = a - xy[i]
        ok = np.abs(denom) > 1e-12 * np.maximum(np.hypot(e[:, 0], e[:, 1]), 1e-300)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (ap[:, 0] * e[:, 1] - ap[:, 1] * e[:, 0]) / denom
            u = (ap[:, 0] * d[1] - ap[:, 1] * d[0]) / denom
        hit = ok & (t > 1e-9) & (u >= 0) & (u <= 1)
        idx = np.flatnonzero(hit)
        if idx.size:
            links.append((i, i + 1 + int(idx[0])))
    return links


def link_strength(dt, dd, c_t, c_d) -> float:
    """Link weight 1 / (c_T dT + c_D dD)^2 in 1/ppb^2."""
    if dt < 0 or dd < 0:
        raise ValueError("time and distance separations must be >= 0")
    scale = c_t * dt + c_d * dd
    if scale <= 0:
        raise DegenerateLinkError(f"zero link scale for dT={dt}, dD={dd}")
    return 1.0 / scale ** 2


def mrf_spec(survey: Survey, c_t: float = 0.005, c_d: float = 0.0005, wind_links: bool = True) -> MrfSpec:
    edges = [(i, i + 1, ADJACENT) for i in range(survey.n - 1)]
    if wind_links:
        edges += [(i, j, WIND) for i, j in build_wind_links(survey)]
    return MrfSpec(c_t, c_d, tuple(edges))


def edge_weights(spec: MrfSpec, survey: Survey) -> np.ndarray:
    """Strength alpha_ij of every edge in ``spec``.

    Adjacent links use the 3-D distance between the two points. Wind links use the
    horizontal distance from point j to where the air at point i has been advected
    by the wind measured at i after the elapsed time.
    """
    t = survey.times
    p = survey.positions
    alphas = np.empty(len(spec.edges))
    for e, (i, j, kind) in enumerate(spec.edges):
        dt = abs(t[j] - t[i])
        if kind == WIND:
            carried = p[i, :2] + survey.winds[i] * (t[j] - t[i])
            dd = float(np.hypot(*(p[j, :2] - carried)))
        else:
            dd = float(np.linalg.norm(p[j] - p[i]))
        alphas[e] = link_strength(dt, dd, spec.c_t, spec.c_d)
    return alphas


def assemble_mrf_precision(spec: MrfSpec, survey: Survey) -> sparse.csr_matrix:
    """J = sum over edges of alpha_ij * Lambda_ij, as a sparse symmetric matrix."""
    n = survey.n
    if not spec.edges:
        return sparse.csr_matrix((n, n))
    alphas = edge_weights(spec, survey)
    ii = np.array([e[0] for e in spec.edges])
    jj = np.array([e[1] for e in spec.edges])
    rows = np.concatenate([ii, jj, ii, jj])
    cols = np.concatenate([ii, jj, jj, ii])
    vals = np.concatenate([alphas, alphas, -alphas, -alphas])
    return sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def build_mrf_background(survey: Survey, c_t: float = 0.005, c_d: float = 0.0005, mu: float = 1.0,
                         beta0=None, wind_links: bool = True) -> BackgroundModel:
    spec = mrf_spec(survey, c_t, c_d, wind_links)
    J = assemble_mrf_precision(spec, survey)
    if beta0 is None:
        beta0 = default_reference_level(survey)
    b0 = np.full(survey.n, float(beta0)) if np.ndim(beta0) == 0 else np.asarray(beta0, dtype=float)
    return BackgroundModel(sparse.identity(survey.n, format="csr"), b0, J, mu, "mrf",
                           {"edges": spec.edges, "c_t": c_t, "c_d": c_d})


def default_reference_level(survey: Survey) -> float:
    """Robust clean-air level: 5th percentile of the measured concentrations."""
    return float(np.percentile(survey.concentrations, 5.0))


# ---------------------------------------------------------------------------
# Chebyshev polynomial basis
# ---------------------------------------------------------------------------

def cheby_eval(order: int, t: float) -> float:
    """U_order(t) by the second-kind recurrence."""
    if order < 0:
        raise ValueError("order must be >= 0")
    u_prev, u = 1.0, 2.0 * t
    if order == 0:
        return u_prev
    for _ in range(order - 1):
        u_prev, u = u, 2.0 * t * u - u_prev
    return u


def cheby_table(order: int, t):
    """Values and first/second derivatives of U_0..U_order at points ``t``.

    Derivatives follow from differentiating the recurrence:
    U'_{k+1} = 2 U_k + 2t U'_k - U'_{k-1} and U''_{k+1} = 4 U'_k + 2t U''_k - U''_{k-1}.
    """
    t = np.asarray(t, dtype=float)
    v = np.zeros(t.shape + (order + 1,))
    d1 = np.zeros_like(v)
    d2 = np.zeros_like(v)
    v[..., 0] = 1.0
    if order >= 1:
        v[..., 1] = 2.0 * t
        d1[..., 1] = 2.0
    for k in range(1, order):
        v[..., k + 1] = 2.0 * t * v[..., k] - v[..., k - 1]
        d1[..., k + 1] = 2.0 * v[..., k] + 2.0 * t * d1[..., k] - d1[..., k - 1]
        d2[..., k + 1] = 4.0 * d1[..., k] + 2.0 * t * d2[..., k] - d2[..., k - 1]
    return v, d1, d2


@dataclass(frozen=True)
class ChebySpec:
    """Chebyshev background setup.

    ``box`` holds (lo, hi) for x, y, z, t. ``grid`` is a (G, 4) array of
    collocation points and ``grid_wind`` their (G, 2) horizontal wind vectors.
    """

    degrees: tuple[int, int, int, int]
    box: tuple
    mu1: float = 1e-6
    mu2: float = 1.0
    mu3: float = 1.0
    b0: float = 1800.0
    grid: np.ndarray = None
    grid_wind: np.ndarray = None

    def __post_init__(self):
        if len(self.degrees) != 4 or min(self.degrees) < 0:
            raise ValueError("degrees must be four non-negative integers")
        for lo, hi in self.box:
            if not hi > lo:
                raise ValueError("Chebyshev domain box is degenerate")
        if min(self.mu1, self.mu2, self.mu3) < 0:
            raise ValueError("penalty weights must be >= 0")

    @property
    def r(self) -> int:
        return int(np.prod([d + 1 for d in self.degrees]))

    @property
    def indices(self):
        return list(itertools.product(*(range(d + 1) for d in self.degrees)))

    @classmethod
    def from_survey(cls, survey: Survey, degrees=(2, 2, 0, 2), mu1=1e-6, mu2=1.0, mu3=1.0, b0=None):
        coords = survey_coords(survey)
        box = []
        for lo, hi in zip(coords.min(axis=0), coords.max(axis=0)):
            if hi - lo < 1e-9:
                lo, hi = lo - 1.0, hi + 1.0
            box.append((float(lo), float(hi)))
        if b0 is None:
            b0 = default_reference_level(survey)
        return cls(tuple(int(d) for d in degrees), tuple(box), mu1, mu2, mu3, float(b0),
                   coords, np.array(survey.winds))

    def scaled(self, coords):
        coords = np.asarray(coords, dtype=float).reshape(-1, 4)
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        tol = 1e-9 * (hi - lo)
        if np.any(coords < lo - tol) or np.any(coords > hi + tol):
            raise DomainError("coordinate outside the Chebyshev domain box")
        return np.clip(2.0 * (coords - lo) / (hi - lo) - 1.0, -1.0, 1.0), 2.0 / (hi - lo)

    def reference_coefficients(self) -> np.ndarray:
        beta0 = np.zeros(self.r)
        beta0[0] = self.b0
        return beta0


def survey_coords(survey: Survey) -> np.ndarray:
    return np.column_stack([survey.positions, survey.times])


def _tensor(tables, idx) -> np.ndarray:
    cols = [tables[0][:, i] * tables[1][:, j] * tables[2][:, k] * tables[3][:, l] for i, j, k, l in idx]
    return np.column_stack(cols)


def _basis_at(spec: ChebySpec, coords):
    tilde, scale = spec.scaled(coords)
    tabs = [cheby_table(d, tilde[:, a]) for a, d in enumerate(spec.degrees)]
    return tabs, scale


def cheby_basis(spec: ChebySpec, survey: Survey) -> np.ndarray:
    """P with one row per measurement and one column per (i, j, k, l) index."""
    tabs, _ = _basis_at(spec, survey_coords(survey))
    return _tensor([t[0] for t in tabs], spec.indices)


def cheby_derivative_matrices(spec: ChebySpec, coords):
    """Derivative design matrices for each coordinate.

    First derivatives are taken w.r.t. physical coordinates (needed for the
    transport residual in ppb/s); second derivatives w.r.t. the mapped [-1, 1]
    coordinates so the curvature weight is independent of the domain size.
    """
    tabs, scale = _basis_at(spec, coords)
    idx = spec.indices
    values = [t[0] for t in tabs]
    first, second = [], []
    for a in range(4):
        t1 = list(values)
        t1[a] = tabs[a][1]
        first.append(scale[a] * _tensor(t1, idx))
        t2 = list(values)
        t2[a] = tabs[a][2]
        second.append(_tensor(t2, idx))
    return first, second


def cheby_penalties(spec: ChebySpec, with_parts: bool = False):
    """J = mu1 I + mu2 J2 + mu3 J3 from curvature and transport collocation."""
    if spec.grid is None or len(spec.grid) == 0:
        raise ValueError("collocation grid is empty")
    first, second = cheby_derivative_matrices(spec, spec.grid)
    j2 = sum(m.T @ m for m in second)
    wind = np.zeros((len(spec.grid), 3)) if spec.grid_wind is None else np.asarray(spec.grid_wind)
    wind = np.column_stack([wind, np.zeros(len(wind))]) if wind.shape[1] == 2 else wind
    transport = first[3] + sum(wind[:, a, None] * first[a] for a in range(3))
    j3 = transport.T @ transport
    J = spec.mu1 * np.eye(spec.r) + spec.mu2 * j2 + spec.mu3 * j3
    J = 0.5 * (J + J.T)
    if with_parts:
        return J, j2, j3
    return J


def build_cheby_background(survey: Survey, spec: ChebySpec, mu: float = 1.0) -> BackgroundModel:
    P = cheby_basis(spec, survey)
    J = cheby_penalties(spec)
    return BackgroundModel(P, spec.reference_coefficients(), J, mu, "chebyshev", {"spec": spec})
