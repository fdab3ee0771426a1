"""Acceptance battery: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the lines bypass output
capture so they show up in the normal log.
"""
import io
import json
import math
import sys
import time

import numpy as np
import pytest

from slowfast_ldp.averaging import deterministic_start, lln_solve, rate_functional
from slowfast_ldp.cli import run_command
from slowfast_ldp.fastgen import (
    build_finite_generator,
    discretize_torus_diffusion,
    dv_functional,
    fast_generator,
)
from slowfast_ldp.hamiltonian import SlowPoint, TiltedOperator, principal_eigenvalue, variational_sup
from slowfast_ldp.lagrangian import double_opt_lagrangian, legendre_lagrangian
from slowfast_ldp.model import EdgeSet, FiniteChain, ModelSpec, TorusDiffusion, validate_model
from slowfast_ldp.simulator import (
    SimConfig,
    averaging_errors,
    bookkeeping_defect,
    scgf_estimate,
    simulate,
)

from conftest import three_species_model, torus_model, two_state_fast_model

SEED = 20261015


@pytest.fixture
def report(capsys):
    def emit(label, ok, detail, elapsed, budget):
        ok = ok and elapsed < budget
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail} [{elapsed:.1f}s / {budget:.0f}s]"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


def test_criterion_1_two_state_closed_forms(report):
    t0 = time.perf_counter()
    gen = build_finite_generator([[0, 1], [1, 0]])
    dv_err = 0.0
    for p1 in np.linspace(0.01, 0.99, 99):
        closed = (math.sqrt(p1) - math.sqrt(1 - p1)) ** 2
        dv_err = max(dv_err, abs(dv_functional(gen, [p1, 1 - p1]) - closed))
    eig_err = 0.0
    for v in (-2, -1, 0, 1, 3, 10):
        lam = principal_eigenvalue(TiltedOperator.build(np.array([v, 0.0]), gen)).value
        eig_err = max(eig_err, abs(lam - (v - 2 + math.sqrt(v * v + 4)) / 2))
    report("1 two-state closed forms", dv_err <= 1e-8 and eig_err <= 1e-10,
           f"DV max err {dv_err:.1e} (<=1e-8), eigenvalue max err {eig_err:.1e} (<=1e-10)",
           time.perf_counter() - t0, 1)


def test_criterion_2_dv_duality(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    finite_gap = torus_gap = 0.0
    count = 0
    for size in (2, 3, 4, 5, 6):
        for _ in range(8):
            gen = build_finite_generator(rng.uniform(0.1, 3.0, (size, size)))
            V = rng.normal(0, 2, size)
            lam = principal_eigenvalue(TiltedOperator.build(V, gen)).value
            finite_gap = max(finite_gap, abs(variational_sup(V, gen)[0] - lam))
            count += 1
    z = np.arange(64) / 64
    for _ in range(10):
        c = rng.normal(0, 1, (3, 3))
        smooth = lambda k: c[k, 0] + c[k, 1] * np.sin(2 * np.pi * z) + c[k, 2] * np.cos(2 * np.pi * z)
        a = 0.05 + 0.04 * (1 + np.tanh(smooth(1))) / 2
        gen = discretize_torus_diffusion(smooth(0), a, 64)
        V = smooth(2)
        lam = principal_eigenvalue(TiltedOperator.build(V, gen)).value
        torus_gap = max(torus_gap, abs(variational_sup(V, gen)[0] - lam))
        count += 1
    report("2 Donsker-Varadhan duality", finite_gap <= 1e-6 and torus_gap <= 1e-4 and count >= 50,
           f"{count} instances, finite gap {finite_gap:.1e} (<=1e-6), torus gap {torus_gap:.1e} (<=1e-4)",
           time.perf_counter() - t0, 60)


def _velocity_pairs(spec, rng, count):
    for _ in range(count):
        point = SlowPoint(spec, rng.dirichlet(np.full(spec.q, 2.0)))
        avg = point.flux_gradient(np.zeros(spec.n_edges))
        yield point, avg * np.exp(rng.normal(0, 0.7, spec.n_edges))


def test_criterion_3_lagrangian_forms_agree(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED + 3)
    worst = 0.0
    pairs = 0
    for spec in (three_species_model(), torus_model(32)):
        for point, v in _velocity_pairs(spec, rng, 100):
            leg = legendre_lagrangian(point, v, spec)[0]
            dbl = double_opt_lagrangian(point, v, spec)[0]
            worst = max(worst, abs(leg - dbl) / max(1e-6, 1e-4 * abs(leg)))
            pairs += 1
    report("3 Lagrangian representations agree", worst <= 1.0 and pairs >= 200,
           f"{pairs} pairs, worst |diff| / max(1e-6, 1e-4|L|) = {worst:.2e} (<=1)",
           time.perf_counter() - t0, 300)


def test_criterion_4_zero_cost_flow(report):
    t0 = time.perf_counter()
    results = []
    for spec, mu0 in ((two_state_fast_model(), [0.7, 0.3]),
                      (three_species_model(), [0.5, 0.3, 0.2]),
                      (torus_model(32), [0.8, 0.2])):
        path = lln_solve(mu0, 1.0, 0.01, spec)
        results.append(rate_functional(path, spec, deterministic_start(mu0)))
    report("4 zero-cost averaged flow", max(results) <= 1e-6,
           "J = " + ", ".join(f"{j:.1e}" for j in results) + " (<=1e-6)",
           time.perf_counter() - t0, 60)


def _averaging_model():
    edges = EdgeSet(2, ((0, 1, "1 + 0.5*sin(2*pi*z)"), (1, 0, "0.5 + 0.5*mu[0] + 0.3*cos(2*pi*z)")))
    return validate_model(ModelSpec(edges, TorusDiffusion("1 + mu[0]", "0.1", 32), name="avg"))


@pytest.mark.slow
def test_criterion_5_averaging_principle(report):
    t0 = time.perf_counter()
    spec = _averaging_model()
    mu0 = (0.9, 0.1)
    lln = lln_solve(mu0, 1.0, 0.01, spec)
    ns = np.array([100, 400, 1600])
    medians = []
    for n in ns:
        rec = simulate(spec, SimConfig(n=int(n), T=1.0, dt=1e-3, seed=SEED, mu0=mu0,
                                       replicas=64, samples=200))
        medians.append(float(np.median(averaging_errors(rec, lln))))
    slope = np.polyfit(np.log(ns), np.log(medians), 1)[0]
    ok = bool(np.all(np.diff(medians) < 0)) and -0.7 <= slope <= -0.3
    report("5 averaging principle", ok,
           "medians " + ", ".join(f"{m:.4f}" for m in medians) + f", slope {slope:.3f} in [-0.7,-0.3]",
           time.perf_counter() - t0, 600)


def _scgf_model():
    edges = EdgeSet(2, ((0, 1, "1 + 0.5*sin(2*pi*z)"), (1, 0, "1 + 0.5*sin(2*pi*z)")))
    return validate_model(ModelSpec(edges, TorusDiffusion("1", "0.1", 32), name="scgf"))


@pytest.mark.slow
def test_criterion_6_scgf_matches_hamiltonian(report):
    t0 = time.perf_counter()
    spec = _scgf_model()
    mu0 = (0.5, 0.5)
    # equal momenta on both edges make V, hence H, independent of mu
    momenta = np.array([[0.0, 0.0], [0.05, 0.05], [-0.05, -0.05], [0.1, 0.1], [-0.1, -0.1]])
    est, err = scgf_estimate(spec, SimConfig(n=200, T=1.0, dt=1e-3, seed=SEED, mu0=mu0,
                                             replicas=10_000), momenta)
    point = SlowPoint(spec, mu0)
    target = np.array([point.value(p) for p in momenta])
    tol = np.maximum(3 * err, 0.05 * np.abs(target) + 0.01)
    dev = np.abs(est - target)
    report("6 SCGF vs T*H(p)", bool(np.all(dev <= tol)),
           "max |est - TH| / tol = " + f"{np.max(dev / tol):.3f} (<=1) over {len(momenta)} momenta",
           time.perf_counter() - t0, 900)


def test_criterion_7_gradient_checks(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED + 7)
    worst_rel = 0.0
    checks = 0
    for spec in (three_species_model(), torus_model(32)):
        for _ in range(25):
            point = SlowPoint(spec, rng.dirichlet(np.full(spec.q, 2.0)))
            p = rng.normal(0, 0.7, spec.n_edges)
            g = point.flux_gradient(p)
            fd = np.empty_like(g)
            for j in range(len(p)):
                e = np.zeros_like(p)
                e[j] = 1e-5
                fd[j] = (point.value(p + e) - point.value(p - e)) / 2e-5
            worst_rel = max(worst_rel, float(np.max(np.abs(g - fd) / np.abs(g))))
            checks += 1
    constraint = 0.0
    for spec in (three_species_model(), torus_model(32)):
        for point, v in _velocity_pairs(spec, rng, 10):
            field = double_opt_lagrangian(point, v, spec)[1]
            constraint = max(constraint, float(np.max(np.abs(field.averaged() - v))))
    report("7 gradient checks", worst_rel <= 1e-6 and constraint <= 1e-8 and checks >= 50,
           f"{checks} points, FD rel err {worst_rel:.1e} (<=1e-6), flux constraint {constraint:.1e} (<=1e-8)",
           time.perf_counter() - t0, 60)


def _cli_csv(path):
    out = io.StringIO()
    code = run_command(["simulate", path, "-n", "15", "-T", "0.2", "--seed", "42",
                        "--replicas", "3"], out)
    assert code == 0
    return out.getvalue().encode()


def test_criterion_8_structural_invariants(report, tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED + 8)
    models = (two_state_fast_model(), three_species_model(), torus_model(16))
    defect = 0
    simplex_ok = True
    row_sum = 0.0
    for run in range(100):
        spec = models[run % 3]
        mu0 = tuple(rng.dirichlet(np.ones(spec.q)))
        n = int(rng.integers(1, 40))
        rec = simulate(spec, SimConfig(n=n, T=0.2, dt=1e-3, seed=int(rng.integers(2**32)),
                                       mu0=mu0, samples=20))
        defect = max(defect, bookkeeping_defect(rec, spec))
        simplex_ok &= bool(np.all(rec.counts >= 0) and np.all(rec.counts.sum(axis=2) == n))
        simplex_ok &= bool(np.all(np.diff(rec.jumps, axis=1) >= 0))
        Q = fast_generator(spec, np.asarray(mu0)).Q
        row_sum = max(row_sum, float(np.max(np.abs(Q.sum(axis=1)))))
    for spec in models:
        path = lln_solve(np.full(spec.q, 1 / spec.q), 1.0, 0.05, spec)
        simplex_ok &= bool(np.all(path.mu >= 0) and np.max(np.abs(path.mu.sum(axis=1) - 1)) <= 1e-12)
    model = tmp_path / "m.json"
    model.write_text(json.dumps({
        "q": 2, "edges": [{"from": 0, "to": 1, "rate": "1 + z"}, {"from": 1, "to": 0, "rate": "1"}],
        "fast": {"kind": "finite", "rates": [[None, "2"], ["1", None]]}}))
    identical = _cli_csv(str(model)) == _cli_csv(str(model))
    ok = defect == 0 and simplex_ok and row_sum <= 1e-10 and identical
    report("8 structural invariants", ok,
           f"bookkeeping defect {defect}, simplex {'kept' if simplex_ok else 'broken'}, "
           f"row sums {row_sum:.1e} (<=1e-10), seeded CSV {'identical' if identical else 'differs'}",
           time.perf_counter() - t0, 60)
