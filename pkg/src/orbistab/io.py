"""Artifact export: CSV tables and JSON documents with a schema version.

Floats are written with 17 significant digits so files round-trip exactly
and reruns produce identical bytes.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

SCHEMA_VERSION = "1.0"

# column layouts of every CSV artifact
SCHEMAS = {
    "orbit": ["t", "phi", "dphi", "theta", "dtheta"],
    "curve": ["phi", "Theta", "dTheta", "ddTheta"],
    "linearization": ["tau"] + [f"A{i}{j}" for i in range(1, 4) for j in range(1, 4)] + ["B1", "B2", "B3"],
    "normal": ["tau", "n1", "n2", "n3", "b"],
    "ltv_trace": ["t", "tau", "xi1", "xi2", "xi3", "s", "b", "w"],
    "nonlinear_trace": ["t", "tau", "xi1", "xi2", "xi3", "s", "b", "w", "u", "theta", "phi", "dtheta", "dphi",
                        "orbital_dist", "V_y"],
}


def _clean(obj):
    """Convert numpy scalars/arrays and non-finite floats to JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def dumps(doc, kind):
    body = {"schema": kind, "schema_version": SCHEMA_VERSION, **_clean(doc)}
    return json.dumps(body, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, doc, kind):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(doc, kind))
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def write_csv(path, kind, columns):
    """Write ``columns`` (name -> 1-D array) in the layout of ``SCHEMAS[kind]``."""
    names = SCHEMAS[kind]
    missing = [n for n in names if n not in columns]
    if missing:
        raise KeyError(f"{kind} table lacks columns {missing}")
    data = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"schema={kind} version={SCHEMA_VERSION}\n" + ",".join(names)
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="# ")
    return path


def read_csv(path):
    """Return ``(kind, {name: column})``."""
    path = Path(path)
    with path.open() as fh:
        meta = fh.readline()[2:].strip()
        names = fh.readline()[2:].strip().split(",")
    kind = dict(kv.split("=") for kv in meta.split())["schema"]
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return kind, {n: data[:, i] for i, n in enumerate(names)}


# tables from library objects --------------------------------------------

def orbit_columns(orbit):
    x = orbit.state_at(orbit.t)
    return {"t": orbit.t, "theta": x[:, 0], "phi": x[:, 1], "dtheta": x[:, 2], "dphi": x[:, 3]}


def curve_columns(curve):
    return {"phi": curve.phi, "Theta": curve.theta_grid, "dTheta": curve.dtheta_grid,
            "ddTheta": curve.ddtheta_grid}


def linearization_columns(lin):
    cols = {"tau": lin.tau}
    for i in range(3):
        for j in range(3):
            cols[f"A{i + 1}{j + 1}"] = lin.A[:, i, j]
        cols[f"B{i + 1}"] = lin.B[:, i]
    return cols


def normal_columns(sub, n=None):
    tau = np.asarray(sub.tau) if n is None else sub.tau[0] + np.linspace(0.0, sub.T_tau, n + 1)
    nv = np.array([sub.n_at(t) for t in tau])
    b = np.array([sub.b_at(t) for t in tau])
    return {"tau": tau, "n1": nv[:, 0], "n2": nv[:, 1], "n3": nv[:, 2], "b": b}
