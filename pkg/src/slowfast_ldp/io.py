"""Model files (JSON) and trajectory CSVs.

A model file looks like::

    {
      "name": "two-state",
      "q": 2,
      "edges": [{"from": 0, "to": 1, "rate": "1 + 0.5*sin(2*pi*z)"},
                {"from": 1, "to": 0, "rate": "1"}],
      "fast": {"kind": "torus", "drift": "0", "diffusivity": "0.1", "N": 32}
    }

or, for a finite fast chain, ``"fast": {"kind": "finite", "rates": [[null, "1"], ["1", null]]}``.

Trajectory CSVs use the header ``t,mu_0..mu_{q-1},w_<a>_<b>...,z`` with an
optional leading ``replica`` column when several replicas are written.
"""
from __future__ import annotations

import csv
import json

import numpy as np

from .averaging import Path
from .errors import ModelError
from .model import EdgeSet, FiniteChain, ModelSpec, TorusDiffusion


def model_from_dict(data) -> ModelSpec:
    try:
        q = int(data["q"])
        edges = [(int(e["from"]), int(e["to"]), str(e["rate"])) for e in data["edges"]]
        fast = data["fast"]
        kind = fast["kind"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"malformed model file: {exc!r}") from exc
    edge_set = EdgeSet(q, tuple(edges))
    if kind == "finite":
        rows = [[None if r is None else str(r) for r in row] for row in fast["rates"]]
        fast_spec = FiniteChain(tuple(tuple(r) for r in rows))
    elif kind == "torus":
        fast_spec = TorusDiffusion(str(fast["drift"]), str(fast["diffusivity"]),
                                   int(fast.get("N", 64)))
    else:
        raise ModelError(f"unknown fast kind {kind!r}; expected 'finite' or 'torus'")
    return ModelSpec(edge_set, fast_spec, name=str(data.get("name", "")))


def load_model(path) -> ModelSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ModelError(f"cannot read model file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelError(f"model file is not valid JSON: {exc}") from exc
    return model_from_dict(data)


def path_header(spec: ModelSpec, replica=False):
    cols = ["t"] + [f"mu_{a}" for a in range(spec.q)]
    cols += [f"w_{a}_{b}" for a, b in spec.edges] + ["z"]
    return (["replica"] if replica else []) + cols


def _fmt(x):
    return repr(float(x))


def write_path_csv(fh, spec, times, mu, w, z=None, replica=None):
    """Write one trajectory; ``replica`` (an int) adds the leading replica column."""
    writer = csv.writer(fh)
    if replica is None or replica == 0:
        writer.writerow(path_header(spec, replica is not None))
    for k, t in enumerate(times):
        row = [_fmt(t)] + [_fmt(v) for v in mu[k]] + [_fmt(v) for v in w[k]]
        row.append("" if z is None else _fmt(z[k]))
        writer.writerow(([str(replica)] if replica is not None else []) + row)


def read_path_csv(fh, spec, replica=0) -> Path:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ModelError("path file is empty") from None
    index = {name: i for i, name in enumerate(header)}
    needed = ["t"] + [f"mu_{a}" for a in range(spec.q)] + [f"w_{a}_{b}" for a, b in spec.edges]
    missing = [c for c in needed if c not in index]
    if missing:
        raise ModelError(f"path file lacks columns {missing}")
    rows = []
    for row in reader:
        if not row:
            continue
        if "replica" in index and int(row[index["replica"]]) != replica:
            continue
        try:
            rows.append([float(row[index[c]]) for c in needed])
        except (ValueError, IndexError) as exc:
            raise ModelError(f"bad row in path file: {row}") from exc
    if len(rows) < 2:
        raise ModelError("path file needs at least two rows")
    arr = np.array(rows)
    q = spec.q
    return Path(arr[:, 0], arr[:, 1:1 + q], arr[:, 1 + q:])
