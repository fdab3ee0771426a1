import math

import numpy as np
import pytest

from slowfast_ldp.averaging import (
    Path,
    averaged_field,
    deterministic_start,
    lln_solve,
    rate_functional,
)
from slowfast_ldp.errors import InvalidState, ModelError
from slowfast_ldp.hamiltonian import SlowPoint
from slowfast_ldp.lagrangian import double_opt_lagrangian
from slowfast_ldp.model import EdgeSet, FiniteChain, ModelSpec, validate_model

from conftest import constant_rate_model, three_species_model, torus_model


def test_z_independent_field():
    v = averaged_field([0.3, 0.7], constant_rate_model(2.0))
    np.testing.assert_allclose(v.w_dot, [0.6, 1.4])
    np.testing.assert_allclose(v.mu_dot, [0.8, -0.8])


def test_two_state_fast_chain_averages_the_two_rates(switch_model):
    v = averaged_field([0.5, 0.5], switch_model)
    # rates (1 + 2z, 2 - z) at z = 0, 1 with the uniform stationary measure
    np.testing.assert_allclose(v.w_dot, [0.5 * 2.0, 0.5 * 1.5], rtol=1e-12)


def test_empty_source_gives_zero_flux(three_model):
    v = averaged_field([0.0, 0.4, 0.6], three_model)
    assert v.w_dot[0] == 0.0


def test_fixed_point_path():
    spec = constant_rate_model(1.0)
    path = lln_solve([0.5, 0.5], 2.0, 0.1, spec)
    np.testing.assert_allclose(path.mu, 0.5, atol=1e-15)
    np.testing.assert_allclose(path.w[:, 0], 0.5 * path.times, rtol=1e-12)


def test_exponential_relaxation():
    spec = constant_rate_model(1.0)
    path = lln_solve([0.9, 0.1], 2.0, 0.01, spec)
    exact = 0.5 + 0.4 * np.exp(-2 * path.times)
    np.testing.assert_allclose(path.mu[:, 0], exact, atol=1e-9)


def test_bookkeeping_along_lln(three_model):
    path = lln_solve([0.6, 0.3, 0.1], 1.0, 0.05, three_model)
    B = three_model.incidence()
    drift = path.mu - path.mu[0] - (path.w - path.w[0]) @ B.T
    assert np.max(np.abs(drift)) <= 1e-12


def test_fourth_order_convergence(torus):
    ends = [lln_solve([0.9, 0.1], 1.0, dt, torus).mu[-1] for dt in (0.1, 0.05, 0.025)]
    ratio = np.max(np.abs(ends[0] - ends[1])) / np.max(np.abs(ends[1] - ends[2]))
    assert 12 <= ratio <= 20


def test_step_size_guard(torus):
    with pytest.raises(ModelError):
        lln_solve([0.5, 0.5], 1.0, 0.2, torus)


@pytest.mark.parametrize("factory", [three_species_model, torus_model])
def test_lln_path_costs_nothing(factory):
    spec = factory()
    mu0 = np.full(spec.q, 1 / spec.q)
    path = lln_solve(mu0, 1.0, 0.01, spec)
    assert rate_functional(path, spec, deterministic_start(mu0)) <= 1e-6


def test_wrong_start_is_infinite(torus):
    path = lln_solve([0.5, 0.5], 1.0, 0.05, torus)
    assert rate_functional(path, torus, deterministic_start([0.6, 0.4])) == math.inf


def test_constant_path_at_nonstationary_point(torus):
    mu = np.array([0.8, 0.2])
    t = np.linspace(0, 1.5, 7)
    path = Path(t, np.tile(mu, (7, 1)), np.zeros((7, 2)))
    L0 = double_opt_lagrangian(SlowPoint(torus, mu), np.zeros(2), torus)[0]
    assert L0 > 0
    assert rate_functional(path, torus) == pytest.approx(1.5 * L0, rel=1e-8)


def test_flux_balance_violation_is_infinite(torus):
    t = np.linspace(0, 1, 11)
    mu = np.column_stack([0.5 + 0.1 * t, 0.5 - 0.1 * t])
    assert rate_functional(Path(t, mu, np.zeros((11, 2))), torus) == math.inf


def test_refinement_does_not_raise_cost(torus):
    t = np.linspace(0, 1, 11)
    w = np.column_stack([0.7 * t + 0.1 * t**2, 0.5 * t])
    mu0 = np.array([0.5, 0.5])
    mu = mu0 + (w @ torus.incidence().T)
    path = Path(t, mu, w)
    coarse = rate_functional(path, torus)
    fine = rate_functional(path.refined(), torus)
    assert coarse > 0 and fine <= coarse + 1e-6 * len(t)


def test_averaged_field_matches_gradient_at_zero(three_model):
    mu = [0.25, 0.45, 0.3]
    g = SlowPoint(three_model, mu).flux_gradient(np.zeros(5))
    np.testing.assert_allclose(averaged_field(mu, three_model).w_dot, g, atol=1e-8)


def test_path_rejects_decreasing_flux():
    with pytest.raises(InvalidState):
        Path([0, 1], [[0.5, 0.5], [0.5, 0.5]], [[1.0], [0.5]])


def test_dead_start_is_handled():
    spec = validate_model(ModelSpec(EdgeSet(2, ((0, 1, "1"), (1, 0, "1"))),
                                    FiniteChain(((None, "1"), ("1", None)))))
    path = lln_solve([1.0, 0.0], 1.0, 0.1, spec)
    assert path.mu[-1, 1] > 0.4
