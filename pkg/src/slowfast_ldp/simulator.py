"""Monte Carlo simulation of ``n`` mean-field particles coupled to a fast process.

The fast process runs on timescale ``n`` and the particle count is also
``n``. Each step of length ``dt``:

1. the fast coordinate advances by four substeps (Euler-Maruyama for the
   torus diffusion ``dZ = n b dt + sqrt(2 n a) dW``, the factor 2 coming
   from the generator's unhalved second-order term; single-jump exponential
   clocks for a finite chain),
2. every edge fires at most one jump with probability
   ``min(1, n mu_a r(a, b, mu, z) dt)``.

Counts are kept as integers so ``mu = counts / n`` and ``w = jumps / n``
stay on the ``1/n`` lattice and the bookkeeping identity is exact.

Replica ``k`` draws from ``Philox(SeedSequence(seed, spawn_key=(k,)))``;
results therefore do not depend on how replicas are batched or ordered.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtri

from .errors import (
    DegenerateWeights,
    ModelError,
    ModelNotDensityIndependent,
    NonFiniteSample,
    StepTooCoarse,
)
from .model import ModelSpec, _simplex_samples, evaluate, validate_model

FAST_SUBSTEPS = 4
STEP_BUDGET = 0.1
MAX_STEPS = 50_000_000
BATCH = 4096
RANDOM_BUDGET = 16_000_000
BOOTSTRAP_KEY = 2**63 - 1


@dataclass(frozen=True)
class SimConfig:
    n: int
    T: float
    dt: float
    seed: int
    mu0: tuple
    replicas: int = 1
    samples: int = 100
    z0: float = 0.0

    def __post_init__(self):
        if self.n < 1 or self.replicas < 1 or self.samples < 1:
            raise ModelError("n, replicas and samples must be positive")
        if not (self.T > 0 and self.dt > 0):
            raise ModelError("T and dt must be positive")


@dataclass(frozen=True)
class TrajectoryRecord:
    """Sampled trajectories for all replicas.

    ``counts`` (R, S, q) and ``jumps`` (R, S, |edges|) are integers; the
    empirical density and flux are these divided by ``n``.
    """

    times: np.ndarray
    counts: np.ndarray
    jumps: np.ndarray
    z: np.ndarray
    n: int
    events: np.ndarray
    dt: float = field(default=0.0)

    @property
    def mu(self):
        return self.counts / self.n

    @property
    def w(self):
        return self.jumps / self.n


def _initial_counts(mu0, n):
    mu0 = np.asarray(mu0, dtype=float)
    if np.any(mu0 < 0) or abs(mu0.sum() - 1) > 1e-9:
        raise ModelError("mu0 must be a probability vector")
    raw = mu0 * n
    counts = np.floor(raw).astype(np.int64)
    short = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def _fast_exit_bound(spec):
    fast = spec.fast
    if fast.kind != "finite":
        return 0.0
    mus = _simplex_samples(spec.q, 64)
    bound = 0.0
    for i, row in enumerate(fast.rates):
        total = sum(evaluate(f, mus, float(i)) for j, f in enumerate(row) if j != i)
        bound = max(bound, float(np.max(total)))
    return bound


def step_size(spec: ModelSpec, cfg: SimConfig):
    """Largest step dividing ``T`` that respects ``n r_max q^2 dt <= 0.1``.

    For finite fast chains the substep also keeps ``n * exit_rate * dt/4 <= 0.1``.
    """
    if not spec.validated:
        spec = validate_model(spec)
    r_max = max(hi for _, hi in spec.rate_bounds)
    limit = cfg.dt
    if r_max > 0:
        limit = min(limit, STEP_BUDGET / (cfg.n * r_max * spec.q**2))
    exit_rate = _fast_exit_bound(spec)
    if exit_rate > 0:
        limit = min(limit, STEP_BUDGET * FAST_SUBSTEPS / (cfg.n * exit_rate))
    steps = int(math.ceil(cfg.T / limit - 1e-9))
    if steps > MAX_STEPS:
        raise StepTooCoarse(f"{steps} steps needed; refusing to run more than {MAX_STEPS}")
    return cfg.T / steps, steps


def _streams(seed, replicas):
    return [np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(k,))))
            for k in replicas]


def _run_batch(spec, cfg, replicas, dt, steps, sample_steps, record_path):
    B = len(replicas)
    n = cfg.n
    q, E = spec.q, spec.n_edges
    src, dst = spec.sources(), spec.targets()
    fast = spec.fast
    finite = fast.kind == "finite"
    Nf = fast.size if finite else 0
    h = dt / FAST_SUBSTEPS
    # uniforms per step: one per edge, plus (finite) two per substep or (torus) one per substep
    channels = E + FAST_SUBSTEPS * (2 if finite else 1)
    chunk = max(1, min(steps, RANDOM_BUDGET // max(1, B * channels)))
    rngs = _streams(cfg.seed, replicas)

    c = np.tile(_initial_counts(cfg.mu0, n), (B, 1))
    k = np.zeros((B, E), dtype=np.int64)
    if finite:
        z = np.full(B, int(cfg.z0) % Nf, dtype=np.int64)
    else:
        z = np.full(B, float(cfg.z0) % 1.0)
    events = np.zeros(B, dtype=np.int64)
    n_rec = len(sample_steps) if record_path else 2
    rec_c = np.empty((B, n_rec, q), dtype=np.int64)
    rec_k = np.empty((B, n_rec, E), dtype=np.int64)
    rec_z = np.empty((B, n_rec))
    rec_c[:, 0], rec_k[:, 0], rec_z[:, 0] = c, k, z
    slot = 1
    next_sample = sample_steps[1] if record_path else steps
    rows = np.arange(B)
    nodes = fast.nodes() if finite else None
    dirty = True

    for start in range(0, steps, chunk):
        m = min(chunk, steps - start)
        U = np.stack([g.random((m, channels)) for g in rngs], axis=1)   # (m, B, channels)
        for s in range(m):
            u = U[s]
            if finite:
                if dirty:
                    # counts changed: refresh fast rates and slow rates on every fast node
                    mu = c / n
                    R = np.zeros((B, Nf, Nf))
                    for i, row in enumerate(fast.rates):
                        for j, f in enumerate(row):
                            if i != j:
                                R[:, i, j] = evaluate(f, mu, float(i))
                    node_rates = spec.rates(mu[:, None, :], nodes)          # (B, Nf, E)
                    dirty = False
                for sub in range(FAST_SUBSTEPS):
                    out = R[rows, z]                                   # (B, Nf)
                    exit_rate = n * out.sum(axis=1)
                    jump = u[:, E + 2 * sub] < -np.expm1(-exit_rate * h)
                    if not jump.any():
                        continue
                    cum = np.cumsum(out, axis=1)
                    target = (cum < (u[:, E + 2 * sub + 1] * cum[:, -1])[:, None]).sum(axis=1)
                    z = np.where(jump, np.minimum(target, Nf - 1), z)
                zf = z.astype(float)
                rates = node_rates[rows, z]
            else:
                mu = c / n
                for sub in range(FAST_SUBSTEPS):
                    b = evaluate(fast.drift, mu, z)
                    a = evaluate(fast.diffusivity, mu, z)
                    xi = ndtri(u[:, E + sub])
                    z = np.mod(z + n * b * h + np.sqrt(2.0 * n * a * h) * xi, 1.0)
                if not np.all(np.isfinite(z)):
                    raise NonFiniteSample("fast coordinate became non-finite")
                zf = z
                rates = spec.rates(mu, zf)                              # (B, E)
            prob = np.minimum(1.0, c[:, src] * rates * dt)
            fire = u[:, :E] < prob
            for e in (range(E) if fire.any() else ()):
                ok = fire[:, e] & (c[:, src[e]] > 0)
                c[:, src[e]] -= ok
                c[:, dst[e]] += ok
                k[:, e] += ok
                events += ok
                dirty = dirty or bool(ok.any())
            step = start + s + 1
            if step == next_sample:
                rec_c[:, slot], rec_k[:, slot], rec_z[:, slot] = c, k, zf
                slot += 1
                next_sample = sample_steps[slot] if slot < n_rec else -1
    return rec_c, rec_k, rec_z, events


def _threads():
    env = os.environ.get("LDP_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def simulate(spec: ModelSpec, cfg: SimConfig, record_path=True) -> TrajectoryRecord:
    """Simulate ``cfg.replicas`` independent copies of the coupled process."""
    if not spec.validated:
        spec = validate_model(spec)
    if len(cfg.mu0) != spec.q:
        raise ModelError(f"mu0 has {len(cfg.mu0)} entries, model has q = {spec.q}")
    dt, steps = step_size(spec, cfg)
    if record_path:
        sample_steps = np.unique(np.round(np.linspace(0, steps, min(cfg.samples, steps) + 1))
                                 .astype(np.int64))
    else:
        sample_steps = np.array([0, steps])
    times = sample_steps * dt
    times[-1] = cfg.T
    batches = [range(s, min(s + BATCH, cfg.replicas)) for s in range(0, cfg.replicas, BATCH)]

    def run(batch):
        return _run_batch(spec, cfg, batch, dt, steps, sample_steps, record_path)

    workers = min(_threads(), len(batches))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, batches))
    else:
        parts = [run(b) for b in batches]
    counts, jumps, z, events = (np.concatenate(x, axis=0) for x in zip(*parts))
    return TrajectoryRecord(times, counts, jumps, z, cfg.n, events, dt)


def bookkeeping_defect(record: TrajectoryRecord, spec: ModelSpec):
    """Largest integer violation of ``c_a(t) - c_a(0) = sum_b (k_ba - k_ab)``; 0 when exact."""
    B = spec.incidence().astype(np.int64)
    lhs = record.counts - record.counts[:, :1]
    rhs = np.einsum("ae,rse->rsa", B, record.jumps - record.jumps[:, :1])
    return int(np.abs(lhs - rhs).max())


def averaging_errors(record: TrajectoryRecord, lln_path):
    """Per-replica ``sup_t ||mu_n(t) - mu_lln(t)||_inf`` over the sample times."""
    t = record.times
    if t[-1] > lln_path.times[-1] + 1e-12:
        raise ModelError("LLN path does not cover the simulated horizon")
    ref = np.stack([np.interp(t, lln_path.times, lln_path.mu[:, a])
                    for a in range(lln_path.mu.shape[1])], axis=-1)
    return np.abs(record.mu - ref[None]).max(axis=(1, 2))


def averaging_error(spec: ModelSpec, cfg: SimConfig, lln_path) -> float:
    """Median over replicas of the sup-norm density error against ``lln_path``."""
    return float(np.median(averaging_errors(simulate(spec, cfg), lln_path)))


def check_density_independent(spec: ModelSpec, samples=32, tol=1e-12):
    """Raise unless rates and fast coefficients are unchanged under changes of ``mu``."""
    mus = _simplex_samples(spec.q, samples)
    fast = spec.fast
    z = fast.nodes()
    funcs = [e.rate for e in spec.edge_set.edges]
    if fast.kind == "torus":
        funcs += [fast.drift, fast.diffusivity]
    for f in funcs:
        vals = evaluate(f, mus[:, None, :], z)
        if np.max(np.ptp(vals, axis=0)) > tol * max(1.0, float(np.abs(vals).max())):
            raise ModelNotDensityIndependent("model coefficients depend on mu")
    if fast.kind == "finite":
        for i, row in enumerate(fast.rates):
            for f in row:
                vals = evaluate(f, mus, float(i))
                if np.ptp(vals) > tol * max(1.0, float(np.abs(vals).max())):
                    raise ModelNotDensityIndependent("fast rates depend on mu")


def scgf_from_jumps(jumps, n, p_flux, bootstrap=200, seed=0):
    """``(1/n) log mean exp(<p, jumps>)`` with a bootstrap standard error.

    ``jumps`` holds integer per-edge jump counts, i.e. ``n * W_n(T)``.
    """
    p = np.asarray(p_flux, dtype=float)
    lw = jumps @ p
    R = len(lw)
    lse = logsumexp(lw)
    ess = math.exp(2 * lse - logsumexp(2 * lw))
    if ess < 10:
        raise DegenerateWeights(f"effective sample size {ess:.1f} < 10")
    estimate = (lse - math.log(R)) / n
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(BOOTSTRAP_KEY,))))
    idx = rng.integers(0, R, size=(bootstrap, R))
    boot = (logsumexp(lw[idx], axis=1) - math.log(R)) / n
    return float(estimate), float(np.std(boot, ddof=1))


def scgf_estimate(spec: ModelSpec, cfg: SimConfig, p_flux):
    """Monte Carlo scaled cumulant generating function of the empirical flux.

    ``p_flux`` may be a single vector or a 2-D array of vectors; all of them
    are evaluated on the same simulated ensemble.
    """
    check_density_independent(spec)
    record = simulate(spec, cfg, record_path=False)
    final = record.jumps[:, -1, :]
    p = np.asarray(p_flux, dtype=float)
    if p.ndim == 1:
        return scgf_from_jumps(final, cfg.n, p, seed=cfg.seed)
    results = [scgf_from_jumps(final, cfg.n, row, seed=cfg.seed) for row in p]
    return np.array([r[0] for r in results]), np.array([r[1] for r in results])
