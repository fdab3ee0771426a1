"""Averaging-principle limit and the path rate functional."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidState, ModelError, StepRejected
from .fastgen import fast_generator, stationary_measure
from .hamiltonian import SlowPoint
from .lagrangian import double_opt_lagrangian
from .model import SIMPLEX_TOL, ModelSpec, SlowState, Velocity

FLUX_BALANCE_TOL = 1e-6
SIMPLEX_EXIT_TOL = 1e-6


@dataclass(frozen=True)
class Path:
    """Slow trajectory sampled on a strictly increasing time grid.

    ``mu`` has shape (K+1, q) and ``w`` shape (K+1, |edges|).
    """

    times: np.ndarray
    mu: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        mu = np.array(self.mu, dtype=float)
        w = np.array(self.w, dtype=float)
        if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0):
            raise InvalidState("path times must be strictly increasing with at least two points")
        if mu.shape[0] != len(times) or w.shape[0] != len(times):
            raise InvalidState("path arrays must have one row per time point")
        if np.any(mu < 0) or np.any(mu > 1) or np.any(np.abs(mu.sum(axis=1) - 1) > SIMPLEX_TOL):
            raise InvalidState("path densities must lie on the simplex")
        if np.any(w < 0) or np.any(np.diff(w, axis=0) < -1e-12):
            raise InvalidState("path fluxes must be nonnegative and nondecreasing")
        for name, arr in (("times", times), ("mu", mu), ("w", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.times)

    def state(self, k):
        return SlowState(self.mu[k], self.w[k])

    def refined(self):
        """Insert midpoints, interpolating linearly."""
        t = np.empty(2 * len(self.times) - 1)
        t[0::2] = self.times
        t[1::2] = 0.5 * (self.times[1:] + self.times[:-1])

        def mid(a):
            out = np.empty((len(t), a.shape[1]))
            out[0::2] = a
            out[1::2] = 0.5 * (a[1:] + a[:-1])
            return out

        mu = mid(self.mu)
        mu /= mu.sum(axis=1, keepdims=True)
        return Path(t, mu, mid(self.w))


def _flux_field(mu, spec):
    """Averaged flux speeds ``mu_a sum_k pi_k r_ab(z_k)`` for a raw density array."""
    gen = fast_generator(spec, mu)
    pi = stationary_measure(gen)
    r = spec.rates(mu, gen.nodes)
    return np.maximum(mu[spec.sources()], 0.0) * (pi @ r)


def averaged_field(mu, spec: ModelSpec) -> Velocity:
    """Averaged flux velocities and the density drift they imply."""
    mu = SlowState.at(mu, spec.n_edges).mu
    return Velocity.from_flux(_flux_field(mu, spec), spec)


def lln_solve(mu0, T, dt, spec: ModelSpec, w0=None) -> Path:
    """Integrate the averaged dynamics with classical RK4.

    Density and flux are advanced together, so the linear bookkeeping
    ``mu(t) - mu(0) = B (w(t) - w(0))`` holds to rounding. The step is
    shrunk to divide ``T`` evenly.
    """
    if T <= 0:
        raise ModelError("horizon T must be positive")
    if dt <= 0 or dt > T / 10:
        raise ModelError("step dt must satisfy 0 < dt <= T/10")
    mu = SlowState.at(mu0, spec.n_edges).mu.copy()
    w = np.zeros(spec.n_edges) if w0 is None else np.array(w0, dtype=float)
    K = int(math.ceil(T / dt - 1e-12))
    h = T / K
    B = spec.incidence()

    def rhs(m):
        f = _flux_field(m, spec)
        return B @ f, f

    mus = [mu.copy()]
    ws = [w.copy()]
    for _ in range(K):
        k1m, k1w = rhs(mu)
        k2m, k2w = rhs(mu + 0.5 * h * k1m)
        k3m, k3w = rhs(mu + 0.5 * h * k2m)
        k4m, k4w = rhs(mu + h * k3m)
        mu = mu + h / 6 * (k1m + 2 * k2m + 2 * k3m + k4m)
        w = w + h / 6 * (k1w + 2 * k2w + 2 * k3w + k4w)
        if mu.min() < -SIMPLEX_EXIT_TOL or abs(mu.sum() - 1) > SIMPLEX_EXIT_TOL:
            raise StepRejected(f"density left the simplex (min {mu.min():.3e})")
        if mu.min() < 0 or abs(mu.sum() - 1) > SIMPLEX_TOL:
            mu = np.maximum(mu, 0.0)
            mu /= mu.sum()
        mus.append(mu.copy())
        ws.append(w.copy())
    return Path(np.linspace(0.0, T, K + 1), np.array(mus), np.array(ws))


def deterministic_start(mu0, w0=None, tol=1e-9):
    """Initial cost that is 0 at ``(mu0, w0)`` and +inf elsewhere."""
    mu0 = np.asarray(mu0, dtype=float)

    def j0(x: SlowState):
        w_ref = np.zeros_like(x.w) if w0 is None else np.asarray(w0, dtype=float)
        close = np.max(np.abs(x.mu - mu0)) <= tol and np.max(np.abs(x.w - w_ref)) <= tol
        return 0.0 if close else math.inf

    return j0


def path_velocities(path: Path):
    """Finite-difference velocities: central inside, second-order one-sided at the ends."""
    order = 2 if len(path) >= 3 else 1
    mu_dot = np.gradient(path.mu, path.times, axis=0, edge_order=order)
    w_dot = np.gradient(path.w, path.times, axis=0, edge_order=order)
    return mu_dot, w_dot


def lagrangian_along(path: Path, spec: ModelSpec):
    """Lagrangian at every node, +inf where the flux balance fails."""
    mu_dot, w_dot = path_velocities(path)
    B = spec.incidence()
    values = np.empty(len(path))
    for k in range(len(path)):
        if np.max(np.abs(mu_dot[k] - B @ w_dot[k])) > FLUX_BALANCE_TOL:
            values[k] = math.inf
            continue
        wd = np.where((w_dot[k] < 0) & (w_dot[k] > -1e-10), 0.0, w_dot[k])
        point = SlowPoint(spec, path.state(k))
        values[k] = double_opt_lagrangian(point, Velocity.from_flux(wd, spec), spec)[0]
    return values


def rate_functional(path: Path, spec: ModelSpec, j0=None) -> float:
    """``J(path) = j0(path(0)) + int L(path, path') dt`` by the trapezoid rule.

    ``j0`` defaults to the deterministic start at the path's own initial point.
    """
    j0 = j0 or deterministic_start(path.mu[0], path.w[0])
    start = j0(path.state(0))
    if math.isinf(start):
        return math.inf
    L = lagrangian_along(path, spec)
    if not np.all(np.isfinite(L)):
        return math.inf
    return float(start + np.trapezoid(L, path.times))
