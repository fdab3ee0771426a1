"""The Lagrangian ``L(x, v)`` in its two dual forms.

``legendre_lagrangian`` maximizes ``<p, w_dot> - H(x, p)`` over flux
momenta. ``double_opt_lagrangian`` minimizes, over fast occupation measures
``pi``, the cost of producing the flux velocity with per-node speeds plus
the Donsker-Varadhan cost of ``pi``. The inner minimization over per-node
speeds is solved in closed form: the optimal speeds are the rates tilted by
a single multiplier per edge.

Density momenta are fixed at zero in both; they only enter through
``p_b - p_a + p_ab`` and are absorbed by the flux components.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import OptimizerDidNotConverge
from .fastgen import dv_functional, dv_gradient
from .hamiltonian import SlowPoint, maximize_over_measures
from .model import ModelSpec, SlowState, Velocity, relative_entropy_s_array

DIVERGENCE_VALUE = 1e8
DIVERGENCE_MOMENTUM = 1e4
FLUX_BALANCE_TOL = 1e-9


@dataclass(frozen=True)
class VelocityField:
    """Per-node flux speeds ``u[k, e]`` attached to the measure ``pi``."""

    pi: np.ndarray
    u: np.ndarray
    multipliers: np.ndarray

    def averaged(self):
        return self.pi @ self.u


def _as_velocity(v, spec):
    if isinstance(v, Velocity):
        return v
    return Velocity.from_flux(v, spec)


def _point(x, spec):
    return x if isinstance(x, SlowPoint) else SlowPoint(spec, x)


def _infeasible(point, v):
    """Analytic infeasibility: negative flux, broken flux balance, or a dead edge."""
    w_dot = v.w_dot
    if np.any(w_dot < 0):
        return True
    if np.max(np.abs(v.mu_dot - point.incidence @ w_dot), initial=0.0) > FLUX_BALANCE_TOL:
        return True
    dead = ~np.any(point.weights > 0, axis=0)
    return bool(np.any(dead & (w_dot > 0)))


def legendre_lagrangian(x, v, spec: ModelSpec, tol=1e-11, max_iter=200):
    """``sup_p <p, w_dot> - H(x, p)`` over flux momenta.

    Returns ``(value, p_flux)``. Edges with zero velocity have their momentum
    sent to ``-inf`` directly, since ``H`` is nondecreasing in each flux
    momentum and the supremum is the limit. The remaining coordinates are
    found by damped Newton with a finite-difference Hessian of the exact
    eigenvalue gradient.
    """
    point = _point(x, spec)
    v = _as_velocity(v, spec)
    E = spec.n_edges
    if _infeasible(point, v):
        return math.inf, None
    w_dot = v.w_dot
    active = w_dot > 0
    p = np.where(active, 0.0, -np.inf)
    idx = np.flatnonzero(active)

    def evaluate(p):
        triple = point.eigen(p)
        value = float(w_dot[idx] @ p[idx]) - triple.value
        grad = w_dot - point.flux_gradient(p, triple)
        return value, grad[idx]

    G, g = evaluate(p)
    if idx.size == 0:
        return max(G, 0.0), p
    scale = max(1.0, float(np.abs(w_dot).max()))
    for _ in range(max_iter):
        if np.max(np.abs(g)) <= tol * scale:
            break
        if G > DIVERGENCE_VALUE and np.max(np.abs(p[idx])) > DIVERGENCE_MOMENTUM:
            return math.inf, p
        hess = np.empty((idx.size, idx.size))
        for j in range(idx.size):
            h = 1e-5 * max(1.0, abs(p[idx[j]]))
            pp = p.copy()
            pm = p.copy()
            pp[idx[j]] += h
            pm[idx[j]] -= h
            hess[:, j] = -(evaluate(pp)[1] - evaluate(pm)[1]) / (2 * h)
        hess = 0.5 * (hess + hess.T)
        ridge = 1e-12 * max(1.0, float(np.trace(hess)))
        try:
            d = scipy.linalg.solve(hess + ridge * np.eye(idx.size), g, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            d = g.copy()
        if g @ d <= 0:
            d = g.copy()
        d_norm = np.max(np.abs(d))
        if d_norm > 10.0:
            d *= 10.0 / d_norm
        step = 1.0
        while True:
            trial = p.copy()
            trial[idx] += step * d
            G_new, g_new = evaluate(trial)
            if G_new >= G + 1e-4 * step * float(g @ d) - 1e-14 * max(1.0, abs(G)):
                break
            step *= 0.5
            if step < 1e-12:
                raise OptimizerDidNotConverge("Legendre ascent line search failed")
        p, G, g = trial, G_new, g_new
    else:
        if G > DIVERGENCE_VALUE:
            return math.inf, p
        raise OptimizerDidNotConverge(
            f"Legendre ascent stopped with gradient {np.max(np.abs(g)):.3e}")
    return max(G, 0.0), p


def inner_velocity_field(point: SlowPoint, w_dot, pi) -> VelocityField:
    """Optimal per-node speeds for a fixed ``pi``.

    ``u_ab(z) = mu_a r_ab(z) exp(p_ab)`` with ``p_ab = log(w_dot_ab / beta_ab)``
    and ``beta_ab = sum_k pi_k mu_a r_ab(z_k)``, so the averaged speed
    reproduces ``w_dot`` exactly.
    """
    beta = pi @ point.weights
    with np.errstate(divide="ignore"):
        mult = np.where(w_dot > 0, np.log(w_dot / np.where(beta > 0, beta, 1.0)), -np.inf)
    u = point.weights * np.exp(mult)
    return VelocityField(pi, u, mult)


def averaged_measure_cost(point: SlowPoint, w_dot, pi):
    """Inner value ``sum_ab S(w_dot_ab | <mu_a r_ab, pi>)``."""
    return float(relative_entropy_s_array(w_dot, pi @ point.weights).sum())


def double_opt_lagrangian(x, v, spec: ModelSpec):
    """``inf_pi [ sum_ab S(w_dot_ab | mu_a <r_ab, pi>) + I(mu, pi) ]``.

    Returns ``(value, VelocityField)`` where the field carries the
    minimizing measure, the per-node speeds and their multipliers.
    """
    point = _point(x, spec)
    v = _as_velocity(v, spec)
    if _infeasible(point, v):
        return math.inf, None
    w_dot = v.w_dot
    Q = point.gen.Q
    weights = point.weights
    warm = {"u": None}

    def objective(pi):
        beta = pi @ weights
        I, u = dv_functional(Q, pi, return_potential=True, u0=warm["u"])
        warm["u"] = u
        cost = float(relative_entropy_s_array(w_dot, beta).sum()) + I
        with np.errstate(divide="ignore", invalid="ignore"):
            dS = np.where(w_dot > 0, 1.0 - w_dot / beta, 1.0)
        grad = weights @ dS + dv_gradient(Q, u)
        return -cost, -grad

    neg, pi = maximize_over_measures(objective, Q.shape[0])
    return max(-neg, 0.0), inner_velocity_field(point, w_dot, pi)
