"""Domain types for the mean-field slow-fast system and the slow Hamiltonian.

The slow state is a pair ``(mu, w)``: the empirical density over ``q``
species and the cumulative one-way flux (jumps per particle) over a fixed
list of directed edges. Rates ``r(a, b, mu, z)`` and the fast-process
coefficients are expressions in ``mu`` and the fast coordinate ``z``.

Momenta enter the slow Hamiltonian only through ``p_b - p_a + p_ab``, so
the density components of a :class:`Momentum` are redundant: they can always
be shifted into the flux components (see :meth:`Momentum.edge_tilts`).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DuplicateEdge,
    EdgeRateNotBoundedAway,
    EllipticityViolated,
    GridTooCoarse,
    InvalidState,
    ModelError,
    ModelEvaluationError,
    NegativeArgument,
    NegativeRate,
)
from .expr import as_expression

SIMPLEX_TOL = 1e-12
RATE_FLOOR = 1e-10
ELLIPTICITY_FLOOR = 1e-8
MIN_TORUS_GRID = 8


def evaluate(f, mu, z):
    """Evaluate an expression tree or a plain callable with broadcasting."""
    mu = np.asarray(mu, dtype=float)
    z = np.asarray(z, dtype=float)
    out = np.asarray(f(mu, z), dtype=float)
    out = np.broadcast_to(out, np.broadcast_shapes(mu.shape[:-1], z.shape, out.shape))
    if not np.all(np.isfinite(out)):
        raise ModelEvaluationError("model expression produced a non-finite value")
    return out


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SlowState:
    mu: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        mu = _readonly(self.mu)
        w = _readonly(self.w)
        if mu.ndim != 1 or w.ndim != 1:
            raise InvalidState("mu and w must be vectors")
        if np.any(mu < 0) or np.any(mu > 1) or abs(mu.sum() - 1.0) > SIMPLEX_TOL:
            raise InvalidState(f"mu = {mu} is not a probability vector")
        if np.any(w < 0):
            raise InvalidState("fluxes must be nonnegative")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "w", w)

    @classmethod
    def at(cls, mu, n_edges):
        """State with density ``mu`` and zero accumulated flux."""
        return cls(mu, np.zeros(n_edges))


@dataclass(frozen=True)
class Momentum:
    p_density: np.ndarray
    p_flux: np.ndarray

    def __post_init__(self):
        pd = _readonly(self.p_density)
        pf = _readonly(self.p_flux)
        if not (np.all(np.isfinite(pd)) and np.all(np.isfinite(pf))):
            raise ModelError("momentum entries must be finite")
        object.__setattr__(self, "p_density", pd)
        object.__setattr__(self, "p_flux", pf)

    @classmethod
    def flux(cls, p_flux, q):
        return cls(np.zeros(q), p_flux)

    def edge_tilts(self, edges):
        """``p_b - p_a + p_ab`` for every edge ``(a, b)``."""
        src = np.array([a for a, _ in edges], dtype=int)
        dst = np.array([b for _, b in edges], dtype=int)
        return self.p_density[dst] - self.p_density[src] + self.p_flux


@dataclass(frozen=True)
class Velocity:
    """Flux velocity ``w_dot`` and the density velocity it implies."""

    w_dot: np.ndarray
    mu_dot: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w_dot", _readonly(self.w_dot))
        object.__setattr__(self, "mu_dot", _readonly(self.mu_dot))

    @classmethod
    def from_flux(cls, w_dot, spec):
        w_dot = np.asarray(w_dot, dtype=float)
        return cls(w_dot, spec.incidence() @ w_dot)


@dataclass(frozen=True)
class Edge:
    source: int
    target: int
    rate: object


@dataclass(frozen=True)
class EdgeSet:
    q: int
    edges: tuple

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 2:
            raise ModelError(f"species count must be an integer >= 2, got {self.q}")
        edges = []
        seen = set()
        for e in self.edges:
            if not isinstance(e, Edge):
                a, b, rate = e
                e = Edge(int(a), int(b), rate)
            if not (0 <= e.source < self.q and 0 <= e.target < self.q):
                raise ModelError(f"edge ({e.source},{e.target}) out of range for q = {self.q}")
            if e.source == e.target:
                raise ModelError(f"self-loop ({e.source},{e.target}) is not an edge")
            if (e.source, e.target) in seen:
                raise DuplicateEdge(f"edge ({e.source},{e.target}) listed twice")
            seen.add((e.source, e.target))
            edges.append(replace(e, rate=as_expression(e.rate, self.q)))
        if not edges:
            raise ModelError("at least one edge is required")
        object.__setattr__(self, "edges", tuple(edges))

    @property
    def pairs(self):
        return [(e.source, e.target) for e in self.edges]

    def __len__(self):
        return len(self.edges)


@dataclass(frozen=True)
class FiniteChain:
    """Fast process on states ``0..N_f-1``; ``rates[i][j]`` is the i->j rate.

    Entries are expressions in ``mu``; inside them ``z`` is the source
    state's index. Diagonal entries are ignored.
    """

    rates: tuple
    kind = "finite"

    def __post_init__(self):
        rows = tuple(tuple(as_expression(r if r is not None else 0.0) for r in row)
                     for row in self.rates)
        if len(rows) < 2 or any(len(row) != len(rows) for row in rows):
            raise ModelError("finite fast chain needs a square rate matrix of size >= 2")
        object.__setattr__(self, "rates", rows)

    @property
    def size(self):
        return len(self.rates)

    def nodes(self):
        return np.arange(self.size, dtype=float)


@dataclass(frozen=True)
class TorusDiffusion:
    """Diffusion ``b(mu,z) d/dz + a(mu,z) d^2/dz^2`` on the circle [0, 1)."""

    drift: object
    diffusivity: object
    N: int = 64
    kind = "torus"

    def __post_init__(self):
        if self.N < MIN_TORUS_GRID:
            raise GridTooCoarse(f"torus grid N = {self.N} < {MIN_TORUS_GRID}")
        object.__setattr__(self, "drift", as_expression(self.drift))
        object.__setattr__(self, "diffusivity", as_expression(self.diffusivity))

    @property
    def size(self):
        return self.N

    def nodes(self):
        return np.arange(self.N) / self.N


@dataclass(frozen=True)
class ModelSpec:
    edge_set: EdgeSet
    fast: FiniteChain | TorusDiffusion
    name: str = ""
    rate_bounds: tuple | None = field(default=None, compare=False)

    @property
    def q(self):
        return self.edge_set.q

    @property
    def edges(self):
        return self.edge_set.pairs

    @property
    def n_edges(self):
        return len(self.edge_set)

    @property
    def validated(self):
        return self.rate_bounds is not None

    def nodes(self):
        return self.fast.nodes()

    def rates(self, mu, z):
        """Rates of every edge, stacked on a trailing axis of length |edges|."""
        return np.stack([evaluate(e.rate, mu, z) for e in self.edge_set.edges], axis=-1)

    def sources(self):
        return np.array([a for a, _ in self.edges], dtype=int)

    def targets(self):
        return np.array([b for _, b in self.edges], dtype=int)

    def incidence(self):
        """(q, |edges|) matrix with ``mu_dot = incidence @ w_dot``."""
        B = np.zeros((self.q, self.n_edges))
        for k, (a, b) in enumerate(self.edges):
            B[a, k] -= 1.0
            B[b, k] += 1.0
        return B


# --- validation -----------------------------------------------------------

def _simplex_samples(q, count):
    if q == 2:
        s = np.linspace(0.0, 1.0, max(count, 2))
        return np.stack([s, 1.0 - s], axis=-1)
    m = 1
    while math.comb(m + q - 1, q - 1) < count and m < 64:
        m += 1
    if math.comb(m + q - 1, q - 1) <= 20000:
        pts = [np.array(c, dtype=float) for c in itertools.product(range(m + 1), repeat=q - 1)
               if sum(c) <= m]
        pts = np.array([np.append(c, m - c.sum()) for c in pts]) / m
        return pts
    rng = np.random.default_rng(0)
    return np.vstack([np.eye(q), rng.dirichlet(np.ones(q), size=count)])


def validate_model(spec: ModelSpec, sample_count: int = 64) -> ModelSpec:
    """Check positivity and ellipticity on a (mu, z) lattice.

    Returns a copy of ``spec`` whose ``rate_bounds`` holds the sampled
    ``(r_min, r_max)`` of every edge. A rate that is identically zero marks
    an inactive edge and is allowed; a rate that touches ``(0, 1e-10)``
    is not bounded away from zero and is rejected.
    """
    if sample_count < 1:
        raise ModelError("sample_count must be >= 1")
    mus = _simplex_samples(spec.q, sample_count)
    fast = spec.fast
    if fast.kind == "torus":
        zs = np.union1d(np.linspace(0.0, 1.0, sample_count, endpoint=False), fast.nodes())
    else:
        zs = fast.nodes()

    mu_b = mus[:, None, :]
    bounds = []
    for (a, b), e in zip(spec.edges, spec.edge_set.edges):
        r = evaluate(e.rate, mu_b, zs)
        if np.any(r < 0):
            raise NegativeRate(f"rate on edge ({a},{b}) is negative at a sampled point")
        if np.any((r > 0) & (r < RATE_FLOOR)):
            raise EdgeRateNotBoundedAway(f"rate on edge ({a},{b}) falls below {RATE_FLOOR}")
        if np.any(r > 0) and np.any(r == 0):
            raise EdgeRateNotBoundedAway(f"rate on edge ({a},{b}) vanishes on part of the domain")
        bounds.append((float(r.min()), float(r.max())))

    if fast.kind == "torus":
        diff = evaluate(fast.diffusivity, mu_b, zs)
        if np.any(diff < ELLIPTICITY_FLOOR):
            raise EllipticityViolated(f"diffusivity drops below {ELLIPTICITY_FLOOR}")
        evaluate(fast.drift, mu_b, zs)
    else:
        for i, row in enumerate(fast.rates):
            for j, f in enumerate(row):
                if i != j and np.any(evaluate(f, mus, float(i)) < 0):
                    raise NegativeRate(f"fast rate {i}->{j} is negative at a sampled point")
    return replace(spec, rate_bounds=tuple(bounds))


# --- slow Hamiltonian and its dual ----------------------------------------

def slow_hamiltonian_v(x: SlowState, p: Momentum, z, spec: ModelSpec):
    """V_{x,p}(z) = sum_ab mu_a r(a,b,mu,z) (exp(p_b - p_a + p_ab) - 1)."""
    r = spec.rates(x.mu, z)
    tilt = np.expm1(p.edge_tilts(spec.edges))
    return (x.mu[spec.sources()] * r * tilt).sum(axis=-1)


def slow_hamiltonian_dv(x: SlowState, p: Momentum, z, spec: ModelSpec):
    """Derivative of V with respect to each flux momentum, shape (..., |edges|)."""
    r = spec.rates(x.mu, z)
    return x.mu[spec.sources()] * r * np.exp(p.edge_tilts(spec.edges))


def relative_entropy_s(alpha, beta):
    """S(alpha | beta), the Poisson relative entropy; +inf when beta = 0 < alpha."""
    alpha = float(alpha)
    beta = float(beta)
    if alpha < 0 or beta < 0:
        raise NegativeArgument(f"S({alpha} | {beta}) needs nonnegative arguments")
    if alpha == 0:
        return beta
    if beta == 0:
        return math.inf
    return alpha * math.log(alpha / beta) - (alpha - beta)


def relative_entropy_s_array(alpha, beta):
    """Vectorized S for arrays with ``alpha >= 0``, ``beta >= 0``."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(alpha < 0) or np.any(beta < 0):
        raise NegativeArgument("S needs nonnegative arguments")
    out = np.empty(np.broadcast_shapes(alpha.shape, beta.shape))
    a, b = np.broadcast_arrays(alpha, beta)
    zero = a == 0
    inf = (~zero) & (b == 0)
    reg = ~(zero | inf)
    out[zero] = b[zero]
    out[inf] = math.inf
    out[reg] = a[reg] * np.log(a[reg] / b[reg]) - (a[reg] - b[reg])
    return out


def per_z_lagrangian(x: SlowState, v_flux, z, spec: ModelSpec):
    """Sum over edges of S(v_ab | mu_a r(a,b,mu,z)) at a single fast point."""
    v_flux = np.asarray(v_flux, dtype=float)
    if np.any(v_flux < 0):
        return math.inf
    beta = x.mu[spec.sources()] * spec.rates(x.mu, float(z))
    return float(relative_entropy_s_array(v_flux, beta).sum())
