"""Command-line interface.

Numbers go to stdout as CSV or a single JSON object (``"schema": 1``);
diagnostics go to stderr. Exit codes: 0 success, 1 invalid input, 2 solver
failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import io
from .averaging import deterministic_start, lln_solve, rate_functional
from .errors import LDPError, ModelError, SolverError
from .hamiltonian import SlowPoint, variational_sup
from .lagrangian import double_opt_lagrangian, legendre_lagrangian
from .model import Momentum, SlowState, validate_model
from .simulator import SimConfig, scgf_estimate, simulate

SCHEMA = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ModelError(f"{self.prog}: {message}")


def _vector(text):
    try:
        return np.array([float(s) for s in text.split(",") if s.strip() != ""])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _json_number(x):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _emit(obj, out):
    out.write(json.dumps({"schema": SCHEMA, **obj}) + "\n")


def _load(path):
    return validate_model(io.load_model(path))


def _momentum(p, spec):
    if len(p) == spec.n_edges:
        return Momentum.flux(p, spec.q)
    if len(p) == spec.q + spec.n_edges:
        return Momentum(p[:spec.q], p[spec.q:])
    raise ModelError(f"--p needs {spec.n_edges} flux entries or {spec.q + spec.n_edges} "
                     "density+flux entries")


def _state(mu, spec):
    if len(mu) != spec.q:
        raise ModelError(f"--mu needs {spec.q} entries")
    return SlowState.at(mu, spec.n_edges)


def cmd_validate(args, out):
    spec = _load(args.model)
    _emit({"valid": True, "name": spec.name, "q": spec.q,
           "edges": [list(e) for e in spec.edges],
           "fast": spec.fast.kind, "fast_nodes": spec.fast.size,
           "rate_bounds": [list(b) for b in spec.rate_bounds]}, out)


def cmd_hamiltonian(args, out):
    spec = _load(args.model)
    point = SlowPoint(spec, _state(args.mu, spec))
    p = _momentum(args.p, spec)
    triple = point.eigen(p)
    result = {"H": triple.value,
              "gradient": point.flux_gradient(p, triple).tolist()}
    if args.check_variational:
        sup, _ = variational_sup(point.potential(p), point.gen)
        result.update(variational_sup=sup, gap=abs(sup - triple.value))
    _emit(result, out)


def cmd_lagrangian(args, out):
    spec = _load(args.model)
    if len(args.v) != spec.n_edges:
        raise ModelError(f"--v needs {spec.n_edges} flux velocities")
    point = SlowPoint(spec, _state(args.mu, spec))
    leg, p = legendre_lagrangian(point, args.v, spec)
    result = {"L": _json_number(leg)}
    if p is not None:
        result["momentum"] = [_json_number(x) for x in p]
    if args.both:
        dbl, field = double_opt_lagrangian(point, args.v, spec)
        result["L_double_opt"] = _json_number(dbl)
        if field is not None:
            result["measure"] = field.pi.tolist()
        if math.isfinite(leg) and math.isfinite(dbl):
            result["difference"] = abs(leg - dbl)
    _emit(result, out)


def cmd_average(args, out):
    spec = _load(args.model)
    path = lln_solve(args.mu0, args.T, args.dt, spec)
    io.write_path_csv(out, spec, path.times, path.mu, path.w)


def cmd_rate(args, out):
    spec = _load(args.model)
    with open(args.path, newline="", encoding="utf-8") as fh:
        path = io.read_path_csv(fh, spec, replica=args.replica)
    j0 = deterministic_start(args.mu0) if args.mu0 is not None else None
    _emit({"J": _json_number(rate_functional(path, spec, j0))}, out)


def _sim_config(args, spec, samples):
    mu0 = args.mu0 if args.mu0 is not None else np.full(spec.q, 1.0 / spec.q)
    if len(mu0) != spec.q:
        raise ModelError(f"--mu0 needs {spec.q} entries")
    return SimConfig(n=args.n, T=args.T, dt=args.dt, seed=args.seed, mu0=tuple(mu0),
                     replicas=args.replicas, samples=samples, z0=args.z0)


def cmd_simulate(args, out):
    spec = _load(args.model)
    cfg = _sim_config(args, spec, args.samples)
    rec = simulate(spec, cfg)
    print(f"dt used: {rec.dt!r}; events per replica: {rec.events.tolist()[:8]}", file=sys.stderr)
    many = cfg.replicas > 1
    for r in range(cfg.replicas):
        io.write_path_csv(out, spec, rec.times, rec.mu[r], rec.w[r], rec.z[r],
                          replica=r if many else None)


def cmd_scgf(args, out):
    spec = _load(args.model)
    cfg = _sim_config(args, spec, 1)
    if len(args.p) != spec.n_edges:
        raise ModelError(f"--p needs {spec.n_edges} flux momenta")
    est, err = scgf_estimate(spec, cfg, args.p)
    point = SlowPoint(spec, SlowState.at(cfg.mu0, spec.n_edges))
    _emit({"estimate": est, "std_error": err, "T_H": args.T * point.value(args.p)}, out)


def build_parser():
    parser = _Parser(prog="slowfast-ldp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check a model file and report rate bounds")
    p.add_argument("model")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("hamiltonian", help="principal-eigenvalue Hamiltonian H(x, p)")
    p.add_argument("model")
    p.add_argument("--mu", type=_vector, required=True)
    p.add_argument("--p", type=_vector, required=True)
    p.add_argument("--check-variational", action="store_true")
    p.set_defaults(func=cmd_hamiltonian)

    p = sub.add_parser("lagrangian", help="Lagrangian L(x, v) for a flux velocity")
    p.add_argument("model")
    p.add_argument("--mu", type=_vector, required=True)
    p.add_argument("--v", type=_vector, required=True)
    p.add_argument("--both", action="store_true", help="also run the measure-optimization form")
    p.set_defaults(func=cmd_lagrangian)

    p = sub.add_parser("average", help="integrate the averaged (LLN) dynamics; CSV path")
    p.add_argument("model")
    p.add_argument("--mu0", type=_vector, required=True)
    p.add_argument("-T", type=float, required=True)
    p.add_argument("--dt", type=float, required=True)
    p.set_defaults(func=cmd_average)

    p = sub.add_parser("rate", help="path rate functional J of a CSV path")
    p.add_argument("model")
    p.add_argument("--path", required=True)
    p.add_argument("--mu0", type=_vector, default=None,
                   help="deterministic start; defaults to the path's first point")
    p.add_argument("--replica", type=int, default=0)
    p.set_defaults(func=cmd_rate)

    for name, help_text in (("simulate", "simulate the particle system; CSV trajectories"),
                            ("scgf", "Monte Carlo flux SCGF against T*H(p)")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("model")
        p.add_argument("-n", type=int, required=True)
        p.add_argument("-T", type=float, required=True)
        p.add_argument("--dt", type=float, default=1e-3)
        p.add_argument("--seed", type=int, required=(name == "scgf"), default=0)
        p.add_argument("--replicas", type=int, required=(name == "scgf"), default=1)
        p.add_argument("--mu0", type=_vector, default=None)
        p.add_argument("--z0", type=float, default=0.0)
        if name == "simulate":
            p.add_argument("--samples", type=int, default=100)
            p.set_defaults(func=cmd_simulate)
        else:
            p.add_argument("--p", type=_vector, required=True)
            p.set_defaults(func=cmd_scgf)
    return parser


def run_command(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        args.func(args, out)
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    except LDPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run_command())
