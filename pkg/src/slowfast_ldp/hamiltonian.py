"""Effective Hamiltonian as the Perron eigenvalue of the tilted fast generator.

``H(x, p)`` is the principal eigenvalue of ``diag(V_{x,p}(z_k)) + Q(mu)``.
Because the tilted operator is Metzler (nonnegative off-diagonal) and
irreducible, its Perron eigenvalue is real and simple with positive left and
right eigenvectors; the solver below uses that structure throughout.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import ModelError, OptimizerDidNotConverge, PowerIterationStalled
from .fastgen import (
    GeneratorMatrix,
    dv_functional,
    dv_gradient,
    fast_generator,
    stationary_measure,
)
from .model import Momentum, ModelSpec, SlowState, Velocity

RAYLEIGH_TOL = 1e-12


@dataclass(frozen=True)
class TiltedOperator:
    """``M = diag(V) + Q`` with the diagonal shift ``c`` making ``M + cI >= 0``."""

    M: np.ndarray
    V: np.ndarray
    Q: np.ndarray
    shift: float

    @classmethod
    def build(cls, V, gen):
        Q = gen.Q if isinstance(gen, GeneratorMatrix) else np.asarray(gen, dtype=float)
        V = np.asarray(V, dtype=float)
        if V.shape != (Q.shape[0],):
            raise ModelError("potential must have one value per fast node")
        M = Q + np.diag(V)
        return cls(M, V, Q, float(np.abs(np.diag(M)).max() + 1.0))


@dataclass(frozen=True)
class EigenTriple:
    value: float
    right: np.ndarray
    left: np.ndarray


def _perron_vector(M, tol, max_iter):
    """Positive eigenvector of a Metzler irreducible ``M`` by shifted inverse iteration.

    Every iterate is bracketed by the Collatz-Wielandt bounds
    ``min_k (Mx)_k/x_k <= lambda <= max_k (Mx)_k/x_k``; the shift is kept
    strictly above the upper bound so ``sigma I - M`` stays a nonsingular
    M-matrix with a positive inverse, and iterates stay positive.
    """
    n = M.shape[0]
    scale = max(1.0, float(np.abs(M).sum(axis=1).max()))
    x = np.full(n, 1.0 / n)
    sigma = float(M.sum(axis=1).max()) + 1.0
    lu = scipy.linalg.lu_factor(sigma * np.eye(n) - M)
    best = np.inf
    stalled = 0
    for it in range(max_iter):
        y = scipy.linalg.lu_solve(lu, x)
        if not np.all(y > 0):
            y = np.abs(y)
        x = y / y.sum()
        ratios = (M @ x) / x
        lo, hi = float(ratios.min()), float(ratios.max())
        width = hi - lo
        if width <= tol * scale:
            return x, lo, hi
        if width < 0.5 * best:
            best = width
            stalled = 0
        else:
            stalled += 1
            if stalled > 8:
                if best <= 1e-8 * scale:
                    return x, lo, hi
                raise PowerIterationStalled(
                    f"eigenvector bracket stuck at width {width:.3e} after {it} iterations")
        new_sigma = hi + max(width, 1e-3 * tol * scale)
        if new_sigma < sigma - 0.1 * (sigma - hi):
            sigma = new_sigma
            lu = scipy.linalg.lu_factor(sigma * np.eye(n) - M)
    raise PowerIterationStalled(f"no convergence in {max_iter} iterations")


def principal_eigenvalue(op, tol=RAYLEIGH_TOL, max_iter=100000) -> EigenTriple:
    """Perron eigenvalue with right and left eigenvectors.

    ``right`` sums to one and ``<left, right> = 1``. The returned value is
    the two-sided Rayleigh quotient ``left M right``, which is accurate to
    second order in the eigenvector error.
    """
    M = op.M if isinstance(op, TiltedOperator) else np.asarray(op, dtype=float)
    r, _, _ = _perron_vector(M, tol, max_iter)
    l, _, _ = _perron_vector(M.T, tol, max_iter)
    l = l / float(l @ r)
    lam = float(l @ (M @ r))
    return EigenTriple(lam, r, l)


class SlowPoint:
    """Everything at a fixed density ``mu`` that does not depend on momentum.

    Caches the fast generator, the rate samples on the fast grid and the
    source densities so that ``V_{x,p}`` for many ``p`` is a cheap product.
    """

    def __init__(self, spec: ModelSpec, x):
        if not isinstance(x, SlowState):
            x = SlowState.at(x, spec.n_edges)
        self.spec = spec
        self.x = x
        self.gen = fast_generator(spec, x.mu)
        self.nodes = self.gen.nodes
        self.rates = spec.rates(x.mu, self.nodes)          # (K, E)
        self.weights = x.mu[spec.sources()] * self.rates    # mu_a r_ab(z_k)
        self.incidence = spec.incidence()

    def tilt(self, p):
        if isinstance(p, Momentum):
            return p.edge_tilts(self.spec.edges)
        return np.asarray(p, dtype=float)

    def potential(self, p):
        """V_{x,p}(z_k) on the grid; ``p`` is a Momentum or a flux-momentum vector."""
        return (self.weights * np.expm1(self.tilt(p))).sum(axis=1)

    def eigen(self, p):
        V = self.potential(p)
        if np.ptp(V) == 0:
            # constant potential: eigenvalue V, right = constants, left = stationary measure
            K = len(V)
            return EigenTriple(float(V[0]), np.full(K, 1.0 / K), K * stationary_measure(self.gen))
        return principal_eigenvalue(TiltedOperator.build(V, self.gen))

    def value(self, p):
        return self.eigen(p).value

    def flux_gradient(self, p, triple=None):
        triple = triple or self.eigen(p)
        dV = self.weights * np.exp(self.tilt(p))           # (K, E)
        return (triple.left * triple.right) @ dV


def hamiltonian(x: SlowState, p: Momentum, spec: ModelSpec) -> float:
    return SlowPoint(spec, x).value(p)


def hamiltonian_gradient(x: SlowState, p: Momentum, spec: ModelSpec) -> Velocity:
    """First-order eigenvalue perturbation ``dH/dp = <left, dV/dp right>``.

    The flux part is returned as ``w_dot``; the density part equals
    ``mu_dot`` because V sees ``p_density`` only through the incidence map.
    """
    return Velocity.from_flux(SlowPoint(spec, x).flux_gradient(p), spec)


def maximize_over_measures(objective, n, x0=None, gtol=1e-12, maxiter=20000):
    """Maximize a smooth concave function of a probability vector.

    ``objective(pi)`` returns ``(value, grad)``. The simplex is parametrized
    by softmax coordinates, which keeps every iterate strictly interior, and
    the resulting unconstrained problem goes to L-BFGS.
    """
    theta0 = np.zeros(n) if x0 is None else np.log(np.maximum(x0, 1e-300))
    best = {"value": -np.inf, "pi": None}

    def fun(theta):
        t = theta - theta.max()
        pi = np.exp(t)
        pi /= pi.sum()
        value, grad = objective(pi)
        if value > best["value"]:
            best.update(value=value, pi=pi)
        return -value, -(pi * (grad - grad @ pi))

    res = scipy.optimize.minimize(fun, theta0, jac=True, method="L-BFGS-B",
                                  options={"maxiter": maxiter, "maxcor": 30,
                                           "ftol": 1e-16, "gtol": gtol})
    if best["pi"] is None or not np.isfinite(best["value"]):
        raise OptimizerDidNotConverge(f"measure optimization failed: {res.message}")
    return best["value"], best["pi"]


def variational_sup(V, gen):
    """``sup_pi <V, pi> - I(pi)`` computed directly over the simplex."""
    Q = gen.Q if isinstance(gen, GeneratorMatrix) else np.asarray(gen, dtype=float)
    V = np.asarray(V, dtype=float)
    warm = {"u": None}

    def objective(pi):
        I, u = dv_functional(Q, pi, return_potential=True, u0=warm["u"])
        warm["u"] = u
        return float(V @ pi) - I, V - dv_gradient(Q, u)

    return maximize_over_measures(objective, Q.shape[0])


def variational_check(x: SlowState, p: Momentum, spec: ModelSpec):
    """Return ``(sup, gap)`` with ``gap = |sup - H(x, p)|``."""
    point = SlowPoint(spec, x)
    V = point.potential(p)
    sup, _ = variational_sup(V, point.gen)
    return sup, abs(sup - point.value(p))
