"""Fast-process generators, stationary measures and the Donsker-Varadhan functional."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

from .errors import (
    EllipticityViolated,
    GridTooCoarse,
    ModelError,
    NotIrreducible,
    OptimizerDidNotConverge,
    SolverFailed,
)
from .model import ELLIPTICITY_FLOOR, MIN_TORUS_GRID, ModelSpec, evaluate

ROW_SUM_TOL = 1e-10


def _is_irreducible(Q):
    n_comp, _ = connected_components(Q - np.diag(np.diag(Q)) > 0, directed=True,
                                     connection="strong")
    return n_comp == 1


@dataclass(frozen=True)
class GeneratorMatrix:
    """Rate matrix of a continuous-time chain together with node coordinates."""

    Q: np.ndarray
    nodes: np.ndarray

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        Q.setflags(write=False)
        nodes = np.array(self.nodes, dtype=float)
        nodes.setflags(write=False)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] != nodes.shape[0]:
            raise ModelError("generator must be square with one node per row")
        off = Q - np.diag(np.diag(Q))
        if np.any(off < 0):
            raise ModelError("generator has negative off-diagonal entries")
        scale = max(1.0, float(np.abs(Q).max()))
        if np.any(np.abs(Q.sum(axis=1)) > ROW_SUM_TOL * scale):
            raise ModelError("generator rows do not sum to zero")
        if not _is_irreducible(Q):
            raise NotIrreducible("fast generator is not irreducible")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "nodes", nodes)

    @property
    def size(self):
        return self.Q.shape[0]


def build_finite_generator(rates, nodes=None) -> GeneratorMatrix:
    """Generator from a matrix of off-diagonal rates (diagonal is ignored).

    >>> build_finite_generator([[0, 2], [1, 0]]).Q
    array([[-2.,  2.],
           [ 1., -1.]])
    """
    R = np.array(rates, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ModelError("rate matrix must be square")
    np.fill_diagonal(R, 0.0)
    if np.any(R < 0):
        raise ModelError("off-diagonal rates must be nonnegative")
    np.fill_diagonal(R, -R.sum(axis=1))
    if nodes is None:
        nodes = np.arange(R.shape[0], dtype=float)
    return GeneratorMatrix(R, nodes)


def discretize_torus_diffusion(b, a, N: int | None = None) -> GeneratorMatrix:
    """Upwind finite-difference generator of ``b f' + a f''`` on the unit circle.

    ``b`` and ``a`` are samples at ``z_k = k/N``. The diffusion term uses the
    central stencil; the drift is upwinded on the sign of ``b_k`` so every
    off-diagonal entry stays nonnegative (first order in ``1/N`` for the drift).
    """
    b = np.asarray(b, dtype=float)
    a = np.asarray(a, dtype=float)
    N = len(a) if N is None else N
    if N < MIN_TORUS_GRID:
        raise GridTooCoarse(f"grid size {N} < {MIN_TORUS_GRID}")
    b = np.broadcast_to(b, (N,))
    a = np.broadcast_to(a, (N,))
    if np.any(a < ELLIPTICITY_FLOOR):
        raise EllipticityViolated(f"diffusivity below {ELLIPTICITY_FLOOR} on the grid")
    forward = a * N * N + np.maximum(b, 0.0) * N
    backward = a * N * N + np.maximum(-b, 0.0) * N
    k = np.arange(N)
    Q = np.zeros((N, N))
    Q[k, (k + 1) % N] += forward
    Q[k, (k - 1) % N] += backward
    Q[k, k] = -(forward + backward)
    return GeneratorMatrix(Q, k / N)


def fast_generator(spec: ModelSpec, mu) -> GeneratorMatrix:
    """Generator of the fast process with the slow density frozen at ``mu``."""
    mu = np.asarray(mu, dtype=float)
    fast = spec.fast
    if fast.kind == "torus":
        z = fast.nodes()
        return discretize_torus_diffusion(evaluate(fast.drift, mu, z),
                                          evaluate(fast.diffusivity, mu, z), fast.N)
    n = fast.size
    R = np.zeros((n, n))
    for i, row in enumerate(fast.rates):
        for j, f in enumerate(row):
            if i != j:
                R[i, j] = float(evaluate(f, mu, float(i)))
    return build_finite_generator(R, fast.nodes())


def stationary_measure(gen: GeneratorMatrix) -> np.ndarray:
    """Unique probability vector ``pi`` with ``pi Q = 0``.

    Solved densely: ``Q^T`` with its last equation replaced by the
    normalization ``sum(pi) = 1``.
    """
    Q = gen.Q
    n = Q.shape[0]
    A = Q.T.copy()
    A[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        pi = scipy.linalg.solve(A, rhs)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SolverFailed(f"stationary solve failed: {exc}") from exc
    scale = max(1.0, float(np.abs(Q).max()))
    if np.any(pi <= 0) or np.max(np.abs(pi @ Q)) > 1e-10 * scale:
        raise SolverFailed("stationary solve returned an inaccurate or non-positive vector")
    return pi / pi.sum()


def check_measure(pi, size):
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (size,) or np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
        raise ModelError("occupation measure must be a probability vector on the fast nodes")
    return pi


def _components(adjacency):
    _, labels = connected_components(adjacency, directed=False)
    return labels


def dv_potential(Q, pi, u0=None, tol=1e-9, max_iter=500):
    """Minimize ``f(u) = sum_k pi_k (Q e^u)_k e^{-u_k}`` by damped Newton.

    Returns ``(f_min, u)``. Nodes outside the support of ``pi`` are sent to
    ``u = -inf`` in closed form (their only contribution is an inflow term
    that vanishes there); on the support one coordinate per connected
    component is pinned to remove the scale invariance of ``e^u``.
    """
    Q = np.asarray(Q, dtype=float)
    pi = np.asarray(pi, dtype=float)
    n = Q.shape[0]
    S = np.flatnonzero(pi > 0)
    A = pi[S, None] * Q[np.ix_(S, S)]
    np.fill_diagonal(A, 0.0)
    const = float(pi[S] @ np.diag(Q)[S])
    m = len(S)

    labels = _components((A + A.T) > 0)
    pinned = np.zeros(m, dtype=bool)
    pinned[np.unique(labels, return_index=True)[1]] = True
    free = ~pinned

    u = np.zeros(m) if u0 is None else np.where(np.isfinite(u0[S]), u0[S], 0.0)
    # re-gauge so the pinned node of every component sits at 0
    for c in np.unique(labels):
        idx = labels == c
        u[idx] -= u[idx & pinned][0]

    def objective(u):
        with np.errstate(over="ignore", invalid="ignore"):
            W = A * np.exp(u[None, :] - u[:, None])
        return const + W.sum(), W

    f, W = objective(u)
    scale = max(1.0, float(np.abs(A).sum()))
    for _ in range(max_iter):
        g = W.sum(axis=0) - W.sum(axis=1)
        if np.max(np.abs(g[free]), initial=0.0) <= tol:
            break
        Wsym = W + W.T
        H = np.diag(Wsym.sum(axis=1)) - Wsym
        Hr = H[np.ix_(free, free)]
        ridge = 1e-12 * max(1.0, float(np.trace(Hr)) / max(1, Hr.shape[0]))
        try:
            d_free = -scipy.linalg.solve(Hr + ridge * np.eye(Hr.shape[0]), g[free], assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            d_free = -g[free]
        d = np.zeros(m)
        d[free] = d_free
        slope = float(g @ d)
        if slope >= 0:
            d = np.zeros(m)
            d[free] = -g[free]
            slope = float(g @ d)
        step = 1.0
        while True:
            f_new, W_new = objective(u + step * d)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * step * slope + 1e-15 * scale:
                break
            step *= 0.5
            if step < 1e-20:
                break
        if step < 1e-20:
            break
        u = u + step * d
        f, W = f_new, W_new
    g = W.sum(axis=0) - W.sum(axis=1)
    if np.max(np.abs(g[free]), initial=0.0) > max(tol, 1e-13 * scale):
        raise OptimizerDidNotConverge(
            f"Donsker-Varadhan minimization stopped with gradient {np.max(np.abs(g[free])):.3e}")
    full = np.full(n, -np.inf)
    full[S] = u
    return f, full


def dv_functional(gen, pi, return_potential=False, u0=None):
    """Donsker-Varadhan functional ``I(pi) = -inf_u sum_k pi_k (Q e^u)_k / e^{u_k}``.

    Accepts a :class:`GeneratorMatrix` or a raw rate matrix. With
    ``return_potential`` the minimizing log-potential ``u`` is returned too
    (``-inf`` off the support of ``pi``).
    """
    Q = gen.Q if isinstance(gen, GeneratorMatrix) else np.asarray(gen, dtype=float)
    pi = check_measure(pi, Q.shape[0])
    f, u = dv_potential(Q, pi, u0=u0)
    value = -f
    scale = max(1.0, float(np.abs(Q).max()))
    if value < -1e-9 * scale:
        raise SolverFailed(f"Donsker-Varadhan functional came out negative ({value:.3e})")
    value = max(value, 0.0)
    return (value, u) if return_potential else value


def dv_gradient(Q, u):
    """Partial derivatives of ``I`` in ``pi``: ``-(Q e^u)_k e^{-u_k}`` on the support."""
    phi = np.exp(u - np.max(u))
    with np.errstate(invalid="ignore", divide="ignore"):
        return -(Q @ phi) / phi
