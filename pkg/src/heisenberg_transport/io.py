"""Readers and writers: JSON for structured records, CSV for fields and logs.

CSV files open with a single ``# {json}`` header line carrying metadata
(grid box and shape, column names, config hash) so that a field can be
rebuilt without any other file.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import InputError
from .grid import Grid, GridField, HorizontalGridField
from .kantorovich import DiscreteMeasure, TransportPlan
from .moser import TrafficPlan


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_default)


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON form of ``config`` (first 16 hex digits)."""
    return hashlib.sha256(_canonical(config).encode()).hexdigest()[:16]


def dumps(record: dict) -> str:
    """Deterministic, human-readable JSON."""
    return json.dumps(record, sort_keys=True, indent=2, default=_default) + "\n"


def write_json(path, record: dict) -> None:
    Path(path).write_text(dumps(record))


def read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


# ---------------------------------------------------------------------------
# measures and plans


def measure_to_dict(m: DiscreteMeasure) -> dict:
    return {"points": m.points, "weights": m.weights}


def measure_from_dict(d: dict) -> DiscreteMeasure:
    try:
        pts = np.asarray(d["points"], dtype=float)
        wts = d.get("weights")
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed measure record: {exc}") from None
    if wts is None:
        return DiscreteMeasure.uniform(pts)
    return DiscreteMeasure(pts, np.asarray(wts, dtype=float))


def read_measures(path):
    """``(mu, nu)`` from a JSON file ``{"mu": {...}, "nu": {...}}``."""
    d = read_json(path)
    if not isinstance(d, dict) or "mu" not in d or "nu" not in d:
        raise InputError(f"{path}: expected keys 'mu' and 'nu'")
    return measure_from_dict(d["mu"]), measure_from_dict(d["nu"])


def plan_to_dict(plan: TransportPlan) -> dict:
    return {"pairs": [[int(i), int(j), float(m)] for i, j, m in plan.pairs],
            "mu": measure_to_dict(plan.mu), "nu": measure_to_dict(plan.nu)}


def plan_from_dict(d: dict) -> TransportPlan:
    return TransportPlan(np.asarray(d["pairs"], dtype=float), measure_from_dict(d["mu"]), measure_from_dict(d["nu"]))


def traffic_plan_to_dict(q: TrafficPlan) -> dict:
    return {"curves": [c.vertices for c in q.curves], "weights": q.weights, "mass": q.mass}


def traffic_plan_from_dict(d: dict) -> TrafficPlan:
    return TrafficPlan.from_curves([np.asarray(c, dtype=float) for c in d["curves"]], d["weights"],
                                   d.get("mass", 1.0))


# ---------------------------------------------------------------------------
# fields


def grid_to_dict(g: Grid) -> dict:
    return {"low": list(g.low), "high": list(g.high), "shape": list(g.shape)}


def grid_from_dict(d: dict) -> Grid:
    return Grid(tuple(d["low"]), tuple(d["high"]), tuple(d["shape"]))


def write_field_csv(path, field, meta: dict | None = None) -> None:
    """Write a scalar or horizontal field as ``x1,x2,x3,<values>`` rows."""
    if isinstance(field, GridField):
        vals, cols = field.values[..., None], ["value"]
    elif isinstance(field, HorizontalGridField):
        vals, cols = field.components, ["w1", "w2"]
    else:
        raise InputError(f"cannot write {type(field).__name__} as a field")
    g = field.grid
    header = {"grid": grid_to_dict(g), "columns": ["x1", "x2", "x3"] + cols, **(meta or {})}
    xyz = g.coords.reshape(-1, 3)
    data = np.concatenate([xyz, vals.reshape(xyz.shape[0], -1)], axis=1)
    with open(path, "w", newline="") as fh:
        fh.write("# " + _canonical(header) + "\n")
        w = csv.writer(fh)
        w.writerow(header["columns"])
        w.writerows([[repr(float(v)) for v in row] for row in data])


def read_field_csv(path):
    """Inverse of ``write_field_csv``; returns ``(field, header)``."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {p}")
    with open(p, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise InputError(f"{p}: missing metadata header")
        header = json.loads(first[2:])
        rows = list(csv.reader(fh))[1:]
    g = grid_from_dict(header["grid"])
    data = np.asarray(rows, dtype=float)
    if data.shape[0] != g.size:
        raise InputError(f"{p}: expected {g.size} rows, found {data.shape[0]}")
    vals = data[:, 3:].reshape(g.shape + (-1,))
    if vals.shape[-1] == 1:
        return GridField(g, vals[..., 0]), header
    return HorizontalGridField(g, vals), header


def write_log_csv(path, columns, rows, meta: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# " + _canonical(meta or {}) + "\n")
        w = csv.writer(fh)
        w.writerow(list(columns))
        w.writerows([[repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row] for row in rows])
